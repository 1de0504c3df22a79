//! Slider-crank control task.
//!
//! The agent pushes a massless slider along the x axis; the connecting rod
//! transmits the force to a crank pin on a uniform disk rotor. The actor only
//! sees four binary signals that fire when the rotor angle passes ±π/4 or
//! ±3π/4, so neither angle, direction nor speed is directly observable; the
//! critic is given (cos θ, sin θ). Passing π with positive angular velocity
//! pays +0.15, passing with negative velocity pays −0.15; the reward sign is
//! reversed mid-run as the environment change. Episodes run a fixed number of
//! force-loading steps and never end early.
//!
//! Rotor dynamics: `J·θ̈ = R·F_θ − D·θ̇` with `F_θ = f·sin(φ+θ)/cos φ`,
//! `cos φ = (L² + x² − R²)/(2Lx)` and slider position
//! `x = R·cos θ + √(L² − R²·sin²θ)`, integrated by semi-implicit Euler.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepOutcome};
use crate::Error;

pub const SENSOR_ANGLES: [f64; 4] = [PI / 4.0, 3.0 * PI / 4.0, -PI / 4.0, -3.0 * PI / 4.0];
pub const ACTOR_INPUTS: usize = 4;
pub const CRITIC_INPUTS: usize = 2;
pub const OUTPUTS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrankConfig {
    /// Rotor moment of inertia J.
    pub inertia: f64,
    /// Crank radius R (rotor center to pin).
    pub crank_radius: f64,
    /// Rotational damping D.
    pub damping: f64,
    /// Connecting-rod length L (must exceed R).
    pub rod_length: f64,
    /// Physics sub-steps per network step.
    pub substeps: u32,
    /// Force-loading steps per episode.
    pub episode_steps: u32,
    /// Reward magnitude per π crossing.
    pub reward: f64,
}

impl Default for CrankConfig {
    fn default() -> Self {
        CrankConfig {
            inertia: 10.0,
            crank_radius: 1.0,
            damping: 0.1,
            rod_length: 3.0,
            substeps: 1,
            episode_steps: 400,
            reward: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrankEnv {
    pub cfg: CrankConfig,
    /// Unwrapped rotor angle.
    pub theta: f64,
    pub omega: f64,
    pub steps: u32,
    /// −1.0 after the environment change reverses the reward sign.
    pub reward_sign: f64,
    /// Which sensors fired during the last step.
    sensors: [f64; 4],
}

impl CrankEnv {
    pub fn new(cfg: CrankConfig, theta0: f64, reward_reversed: bool) -> Self {
        assert!(cfg.rod_length > cfg.crank_radius, "rod must outreach crank");
        CrankEnv {
            cfg,
            theta: theta0,
            omega: 0.0,
            steps: 0,
            reward_sign: if reward_reversed { -1.0 } else { 1.0 },
            sensors: [0.0; 4],
        }
    }

    /// Slider distance from the rotor center for a given crank angle.
    pub fn slider_position(&self, theta: f64) -> f64 {
        let r = self.cfg.crank_radius;
        let l = self.cfg.rod_length;
        let s = r * theta.sin();
        r * theta.cos() + (l * l - s * s).sqrt()
    }

    /// Rotor torque produced by slider force `f` at angle `theta`.
    pub fn torque(&self, f: f64, theta: f64) -> f64 {
        let r = self.cfg.crank_radius;
        let l = self.cfg.rod_length;
        let x = self.slider_position(theta);
        let cos_phi = (l * l + x * x - r * r) / (2.0 * l * x);
        debug_assert!((0.94..=1.0 + 1e-12).contains(&cos_phi), "cos φ = {cos_phi}");
        let sin_phi = r * theta.sin() / l;
        let f_theta = f * (sin_phi * theta.cos() + cos_phi * theta.sin()) / cos_phi;
        r * f_theta
    }

    pub fn act_crank(&mut self, actor_output: &[f64]) -> Result<StepOutcome, Error> {
        assert_eq!(actor_output.len(), OUTPUTS, "crank expects 1 output");
        if !actor_output[0].is_finite() {
            return Err(Error::NonFiniteOutput { step: self.steps });
        }
        let f = (1.25 * actor_output[0]).clamp(-1.0, 1.0);
        let h = 1.0 / self.cfg.substeps as f64;
        let mut reward = 0.0;
        self.sensors = [0.0; 4];
        for _ in 0..self.cfg.substeps {
            let torque = self.torque(f, self.theta);
            self.omega += h * (torque - self.cfg.damping * self.omega) / self.cfg.inertia;
            let prev = self.theta;
            self.theta += h * self.omega;
            for (i, &angle) in SENSOR_ANGLES.iter().enumerate() {
                if count_crossings(prev, self.theta, angle) != 0 {
                    self.sensors[i] = 1.0;
                }
            }
            let net = count_crossings(prev, self.theta, PI);
            reward += self.reward_sign * self.cfg.reward * net as f64;
        }
        self.steps += 1;
        Ok(StepOutcome {
            reward,
            done: self.steps >= self.cfg.episode_steps,
            td_terminal: false,
        })
    }
}

impl Environment for CrankEnv {
    fn actor_input(&self) -> Vec<f64> {
        self.sensors.to_vec()
    }

    fn critic_input(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin()]
    }

    fn act(&mut self, actor_output: &[f64]) -> Result<StepOutcome, Error> {
        self.act_crank(actor_output)
    }
}

/// Signed number of times the unwrapped angle sweep `prev → new` crosses
/// `target` (mod 2π). Landing exactly on the target counts on that step;
/// starting exactly on it does not.
pub fn count_crossings(prev: f64, new: f64, target: f64) -> i64 {
    let a = (prev - target) / (2.0 * PI);
    let b = (new - target) / (2.0 * PI);
    if new > prev {
        b.floor() as i64 - a.floor() as i64
    } else if new < prev {
        -((a.ceil() - b.ceil()) as i64)
    } else {
        0
    }
}

/// Uniform initial angle over [π/4, 3π/4] ∪ [−3π/4, −π/4].
pub fn sample_initial_angle(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(PI / 4.0..3.0 * PI / 4.0);
    if rng.random_range(0..2) == 0 {
        magnitude
    } else {
        -magnitude
    }
}

/// The 50 test angles: 25 per permitted arc at 0.02π spacing from each arc's
/// lower bound.
pub fn test_angles() -> Vec<f64> {
    let mut v = Vec::with_capacity(50);
    for k in 0..25 {
        v.push(PI / 4.0 + k as f64 * 0.02 * PI);
    }
    for k in 0..25 {
        v.push(-3.0 * PI / 4.0 + k as f64 * 0.02 * PI);
    }
    v
}

/// Signed revolutions of an unwrapped angle trace.
pub fn revolutions(theta_start: f64, theta_end: f64) -> f64 {
    (theta_end - theta_start) / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    fn env(theta0: f64) -> CrankEnv {
        CrankEnv::new(CrankConfig::default(), theta0, false)
    }

    #[test]
    fn dead_center_has_no_torque() {
        let e = env(0.0);
        assert!((e.slider_position(0.0) - 4.0).abs() < 1e-15);
        for f in [-1.0, -0.3, 0.5, 1.0] {
            assert!(e.torque(f, 0.0).abs() < 1e-15);
            assert!(e.torque(f, PI).abs() < 1e-12);
        }
    }

    #[test]
    fn slider_position_closed_form_vs_loop_closure() {
        let e = env(0.0);
        assert!((e.slider_position(PI / 2.0) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        // The closed form must satisfy the rod-length constraint
        // (x − R cos θ)² + (R sin θ)² = L², cross-checked by bisection.
        for k in 0..50 {
            let theta = -PI + k as f64 * (2.0 * PI / 50.0);
            let x = e.slider_position(theta);
            assert!((2.0..=4.0).contains(&x));
            let solve = |theta: f64| {
                let (mut lo, mut hi) = (1.0f64, 5.0f64);
                let residual = |x: f64| {
                    let dx = x - theta.cos();
                    (dx * dx + theta.sin().powi(2)).sqrt() - 3.0
                };
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if residual(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            assert!((x - solve(theta)).abs() < 1e-9, "theta = {theta}");
        }
    }

    #[test]
    fn free_rotation_decays_geometrically() {
        let mut e = env(0.3);
        e.omega = 1.0;
        let mut energy = 0.5 * e.cfg.inertia;
        for t in 1..=200 {
            e.act_crank(&[0.0]).unwrap();
            assert!((e.omega - 0.99f64.powi(t)).abs() < 1e-12);
            let k = 0.5 * e.cfg.inertia * e.omega * e.omega;
            assert!(k < energy);
            energy = k;
        }
    }

    #[test]
    fn driven_trajectory_stays_within_slider_range() {
        let mut e = env(PI / 3.0);
        for t in 0..400 {
            let a = if t % 40 < 20 { 0.9 } else { -0.9 };
            e.act_crank(&[a]).unwrap();
            let x = e.slider_position(e.theta);
            assert!((2.0 - 1e-12..=4.0 + 1e-12).contains(&x));
        }
    }

    #[test]
    fn crossing_counts_on_synthetic_sweeps() {
        // k full turns: each sensor fires exactly k times.
        let k = 7;
        let step = 0.05;
        let total = k as f64 * 2.0 * PI;
        let n = (total / step).ceil() as usize;
        let mut fired = [0i64; 4];
        let mut pi_crossings = 0i64;
        let mut theta = 0.123;
        for _ in 0..n {
            let prev = theta;
            theta = (theta + step).min(0.123 + total);
            for (i, &a) in SENSOR_ANGLES.iter().enumerate() {
                fired[i] += count_crossings(prev, theta, a).abs();
            }
            pi_crossings += count_crossings(prev, theta, PI);
        }
        assert_eq!(fired, [k; 4]);
        assert_eq!(pi_crossings, k);

        // Sweeping back recrosses everything with opposite sign.
        let mut back = 0i64;
        for _ in 0..n {
            let prev = theta;
            theta = (theta - step).max(0.123);
            back += count_crossings(prev, theta, PI);
        }
        assert_eq!(back, -k);
    }

    #[test]
    fn landing_exactly_on_target_counts_once() {
        assert_eq!(count_crossings(0.0, PI, PI), 1);
        assert_eq!(count_crossings(PI, PI + 0.1, PI), 0);
        assert_eq!(count_crossings(PI + 0.1, PI, PI), -1);
        assert_eq!(count_crossings(PI, PI - 0.1, PI), 0);
        assert_eq!(count_crossings(PI, PI, PI), 0);
    }

    #[test]
    fn reward_sign_flip_negates_rewards_bitwise() {
        let cfg = CrankConfig::default();
        let mut e1 = CrankEnv::new(cfg, PI / 2.0, false);
        let mut e2 = CrankEnv::new(cfg, PI / 2.0, true);
        for t in 0..400 {
            let a = [(t as f64 * 0.13).sin()];
            let o1 = e1.act_crank(&a).unwrap();
            let o2 = e2.act_crank(&a).unwrap();
            assert_eq!(e1.theta, e2.theta);
            assert_eq!(o1.reward, -o2.reward);
        }
    }

    #[test]
    fn initial_angles_cover_both_arcs() {
        let mut rng = stream_rng(4, 0, "angles");
        let mut positive = 0;
        for _ in 0..4000 {
            let t = sample_initial_angle(&mut rng);
            let m = t.abs();
            assert!((PI / 4.0..=3.0 * PI / 4.0).contains(&m));
            assert!(t != 0.0);
            if t > 0.0 {
                positive += 1;
            }
        }
        let frac = positive as f64 / 4000.0;
        assert!((0.45..0.55).contains(&frac), "arc split {frac}");
    }

    #[test]
    fn fifty_test_angles_spaced_correctly() {
        let angles = test_angles();
        assert_eq!(angles.len(), 50);
        for w in angles[..25].windows(2).chain(angles[25..].windows(2)) {
            assert!((w[1] - w[0] - 0.02 * PI).abs() < 1e-12);
        }
        for &t in &angles {
            let m = t.abs();
            assert!(m >= PI / 4.0 - 1e-12 && m <= 3.0 * PI / 4.0 + 1e-12);
        }
        assert!((angles[0] - PI / 4.0).abs() < 1e-15);
        assert!((angles[25] + 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn revolutions_and_reward_events_agree() {
        assert!((revolutions(0.0, 400.0 * (2.0 * PI / 400.0)) - 1.0).abs() < 1e-15);
        assert!((revolutions(5.0, 1.0) + revolutions(1.0, 5.0)).abs() < 1e-15);

        // Monotone driven rotation: π crossings within ±1 of revolutions.
        let mut e = env(PI / 2.0);
        let theta0 = e.theta;
        let mut events = 0i64;
        for _ in 0..2000 {
            let prev = e.theta;
            e.act_crank(&[1.0]).unwrap();
            events += count_crossings(prev, e.theta, PI);
        }
        let revs = revolutions(theta0, e.theta);
        assert!(revs > 2.0, "rotor failed to spin up: {revs}");
        assert!((events as f64 - revs).abs() <= 1.0);
    }
}
