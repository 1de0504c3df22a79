//! Sequential navigation task.
//!
//! A unit-square agent moves in a 20 × 20 walled field centered at the
//! origin. It must touch the subgoal circle at (0, 4) and then the final-goal
//! circle at (0, −3); reaching the final goal first only yields a small
//! per-step penalty. The only sensors are a fixed 11 × 11 grid of visual
//! cells covering [−5.5, 5.5]² (each reporting the overlap area with the
//! agent square) and a contact signal that is 2.0 while the agent center is
//! inside the subgoal circle — so whether the subgoal has already been
//! visited must be remembered by the network, not read from the sensors.
//!
//! The second environment variant ("Env2") swaps the roles of the actor's
//! two outputs, which is used to probe adaptability after a mid-run change.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepOutcome};
use crate::Error;

pub const VISUAL_CELLS: usize = 121;
pub const INPUTS: usize = VISUAL_CELLS + 1;
pub const OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    /// Clamp bound for the agent center (field half-width minus agent
    /// half-width).
    pub wall_bound: f64,
    /// Acting steps before the episode is cut off.
    pub max_steps: u32,
    pub subgoal: (f64, f64),
    pub final_goal: (f64, f64),
    pub goal_radius: f64,
    pub reward: f64,
    pub penalty: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            wall_bound: 9.5,
            max_steps: 200,
            subgoal: (0.0, 4.0),
            final_goal: (0.0, -3.0),
            goal_radius: 2.0,
            reward: 0.8,
            penalty: -0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavEnv {
    pub cfg: NavConfig,
    pub pos: (f64, f64),
    pub subgoal_visited: bool,
    pub steps: u32,
    /// Env2: the two actor outputs exchange roles.
    pub outputs_swapped: bool,
}

impl NavEnv {
    pub fn new(cfg: NavConfig, start: (f64, f64), outputs_swapped: bool) -> Self {
        let mut env = NavEnv {
            cfg,
            pos: start,
            subgoal_visited: false,
            steps: 0,
            outputs_swapped,
        };
        // Starting inside the subgoal circle counts as having reached it.
        if env.in_circle(env.cfg.subgoal) {
            env.subgoal_visited = true;
        }
        env
    }

    fn in_circle(&self, center: (f64, f64)) -> bool {
        let dx = self.pos.0 - center.0;
        let dy = self.pos.1 - center.1;
        dx * dx + dy * dy <= self.cfg.goal_radius * self.cfg.goal_radius
    }

    /// 121 overlap areas between the agent square and the sensor cells, then
    /// the subgoal contact signal. Cells are ordered row-major from
    /// (−5, −5) to (5, 5), x fastest.
    pub fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(INPUTS);
        let (ax, ay) = self.pos;
        for row in 0..11 {
            let cy = row as f64 - 5.0;
            let oy = overlap_1d(ay, cy);
            for col in 0..11 {
                let cx = col as f64 - 5.0;
                obs.push(if oy == 0.0 { 0.0 } else { overlap_1d(ax, cx) * oy });
            }
        }
        obs.push(if self.in_circle(self.cfg.subgoal) { 2.0 } else { 0.0 });
        obs
    }

    pub fn act_nav(&mut self, actor_output: &[f64]) -> Result<StepOutcome, Error> {
        assert_eq!(actor_output.len(), OUTPUTS, "navigation expects 2 outputs");
        if !actor_output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteOutput { step: self.steps });
        }
        let (a0, a1) = if self.outputs_swapped {
            (actor_output[1], actor_output[0])
        } else {
            (actor_output[0], actor_output[1])
        };
        let mv = move_vector([a0, a1]);
        let b = self.cfg.wall_bound;
        self.pos.0 = (self.pos.0 + mv[0]).clamp(-b, b);
        self.pos.1 = (self.pos.1 + mv[1]).clamp(-b, b);
        self.steps += 1;

        if self.in_circle(self.cfg.subgoal) {
            self.subgoal_visited = true;
        }
        let mut reward = 0.0;
        let mut done = self.steps >= self.cfg.max_steps;
        let mut td_terminal = false;
        if self.in_circle(self.cfg.final_goal) {
            if self.subgoal_visited {
                reward = self.cfg.reward;
                done = true;
                td_terminal = true;
            } else {
                reward = self.cfg.penalty;
            }
        }
        Ok(StepOutcome {
            reward,
            done,
            td_terminal,
        })
    }
}

impl Environment for NavEnv {
    fn actor_input(&self) -> Vec<f64> {
        self.observe()
    }

    fn critic_input(&self) -> Vec<f64> {
        self.observe()
    }

    fn act(&mut self, actor_output: &[f64]) -> Result<StepOutcome, Error> {
        self.act_nav(actor_output)
    }
}

/// Overlap length of two unit intervals centered at `a` and `c`.
fn overlap_1d(a: f64, c: f64) -> f64 {
    let lo = (a - 0.5).max(c - 0.5);
    let hi = (a + 0.5).min(c + 0.5);
    (hi - lo).max(0.0)
}

/// Maps raw actor outputs to the one-step move: each component is multiplied
/// by 1.25 and clipped to [−1, 1], then the vector is rescaled so that the
/// longest possible move in its direction has length 1 — the movable set
/// becomes the unit disc. E.g. (0.0, 0.9) moves (0.0, 1.0) and (0.3, 0.4)
/// moves (0.3, 0.4).
pub fn move_vector(actor_output: [f64; 2]) -> [f64; 2] {
    let vx = (1.25 * actor_output[0]).clamp(-1.0, 1.0);
    let vy = (1.25 * actor_output[1]).clamp(-1.0, 1.0);
    let len = (vx * vx + vy * vy).sqrt();
    if len == 0.0 {
        return [0.0, 0.0];
    }
    // The clip box's boundary along direction (vx, vy)/len lies at distance
    // 1 / max(|ux|, |uy|); dividing by it maps the box onto the unit disc.
    let scale = (vx.abs() / len).max(vy.abs() / len);
    [vx * scale, vy * scale]
}

/// Start position for the given episode: every fourth episode uniform on the
/// perimeter of the 18 × 18 square (to favor the peripheral area), otherwise
/// uniform over the field interior.
pub fn sample_start(rng: &mut ChaCha8Rng, episode_index: u32, cfg: &NavConfig) -> (f64, f64) {
    if episode_index % 4 == 0 {
        let u: f64 = rng.random_range(0.0..72.0);
        let side = (u / 18.0) as usize;
        let t = u % 18.0 - 9.0;
        match side {
            0 => (t, -9.0),
            1 => (t, 9.0),
            2 => (-9.0, t),
            _ => (9.0, t),
        }
    } else {
        let b = cfg.wall_bound;
        (rng.random_range(-b..b), rng.random_range(-b..b))
    }
}

/// The 46 test start positions: a 7 × 7 grid at 3.0 spacing over [−9, 9]²
/// minus the three points inside a goal circle (boundary inclusive).
pub fn test_grid(cfg: &NavConfig) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(46);
    let r2 = cfg.goal_radius * cfg.goal_radius;
    let dist2 = |p: (f64, f64), c: (f64, f64)| {
        let dx = p.0 - c.0;
        let dy = p.1 - c.1;
        dx * dx + dy * dy
    };
    for iy in 0..7 {
        for ix in 0..7 {
            let p = (ix as f64 * 3.0 - 9.0, iy as f64 * 3.0 - 9.0);
            if dist2(p, cfg.subgoal) <= r2 || dist2(p, cfg.final_goal) <= r2 {
                continue;
            }
            pts.push(p);
        }
    }
    pts
}
