//! Exploration-exponent estimation, run classification, and learning-curve
//! aggregation.
//!
//! The exploration exponent is a finite-time Lyapunov-style exponent of the
//! coupled agent–environment system: a replica agent with identical networks
//! starts a displaced episode, both run without learning, and the divergence
//! rate of their joint (sensor input ⊕ upper-hidden output) state is
//! measured.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::eval_step;
use crate::env::nav::{NavConfig, NavEnv};
use crate::env::Environment;
use crate::rnn::{names, Network, NetworkState};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Initial replica displacement in position units.
    pub displacement: f64,
    /// Distance bounds outside of which the measurement is truncated.
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Start positions; the exponent is averaged over them by the caller.
    pub starts: Vec<(f64, f64)>,
    pub prep_steps: u32,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        // A 3×3 grid strictly inside the visual-sensor coverage, so the
        // initial displacement is always visible in the measured state.
        let mut starts = Vec::with_capacity(9);
        for &y in &[-4.0, 0.0, 4.0] {
            for &x in &[-4.0, 0.0, 4.0] {
                starts.push((x, y));
            }
        }
        ProbeSettings {
            displacement: 1e-6,
            lower_bound: 1e-10,
            upper_bound: 1e2,
            starts,
            prep_steps: 5,
        }
    }
}

/// Measures the exploration exponent for one start position on the
/// navigation task. Returns `Ok(None)` when the probe is degenerate (zero or
/// out-of-bounds initial distance, or truncation before the first step).
/// The networks are read-only; learner state is never touched.
pub fn exploration_exponent(
    actor: &Network,
    nav_cfg: &NavConfig,
    outputs_swapped: bool,
    start: (f64, f64),
    probe: &ProbeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>, Error> {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let replica_start = (
        start.0 + probe.displacement * angle.cos(),
        start.1 + probe.displacement * angle.sin(),
    );
    let mut env_a = NavEnv::new(*nav_cfg, start, outputs_swapped);
    let mut env_b = NavEnv::new(*nav_cfg, replica_start, outputs_swapped);
    let mut state_a = NetworkState::new(actor);
    let mut state_b = NetworkState::new(actor);
    let upper = actor
        .layer_index(names::HID2)
        .expect("actor has an upper hidden layer");

    for _ in 0..probe.prep_steps {
        actor.step(&mut state_a, &env_a.actor_input());
        actor.step(&mut state_b, &env_b.actor_input());
    }

    let distance = |ea: &NavEnv, sa: &NetworkState, eb: &NavEnv, sb: &NetworkState| -> f64 {
        let oa = ea.observe();
        let ob = eb.observe();
        let mut d2 = 0.0;
        for (a, b) in oa.iter().zip(ob.iter()) {
            d2 += (a - b) * (a - b);
        }
        for (a, b) in sa.o[upper].iter().zip(sb.o[upper].iter()) {
            d2 += (a - b) * (a - b);
        }
        d2.sqrt()
    };

    let delta_start = distance(&env_a, &state_a, &env_b, &state_b);
    if !(probe.lower_bound..=probe.upper_bound).contains(&delta_start) {
        return Ok(None);
    }

    let mut t = 0u32;
    let mut end_t = 0u32;
    let mut end_delta = delta_start;
    loop {
        let out_a = eval_step(actor, &mut state_a, &mut env_a)?;
        let out_b = eval_step(actor, &mut state_b, &mut env_b)?;
        t += 1;
        let d = distance(&env_a, &state_a, &env_b, &state_b);
        if !(probe.lower_bound..=probe.upper_bound).contains(&d) {
            break;
        }
        end_t = t;
        end_delta = d;
        // Run until either agent finishes its episode.
        if out_a.done || out_b.done {
            break;
        }
    }
    if end_t == 0 {
        return Ok(None);
    }
    Ok(Some((end_delta / delta_start).ln() / end_t as f64))
}

/// Mean over the probe's start positions; degenerate probes are skipped.
/// Returns `None` when every probe was degenerate.
pub fn exploration_exponent_mean(
    actor: &Network,
    nav_cfg: &NavConfig,
    outputs_swapped: bool,
    probe: &ProbeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>, Error> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &start in &probe.starts {
        if let Some(l) = exploration_exponent(actor, nav_cfg, outputs_swapped, start, probe, rng)? {
            sum += l;
            n += 1;
        }
    }
    Ok(if n == 0 { None } else { Some(sum / n as f64) })
}

// ---------------------------------------------------------------------------
// Run classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunVerdict {
    Success,
    Failure,
    Overrun,
}

/// Classification result; `Incomplete` is reported explicitly when required
/// inputs are missing rather than defaulting silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Verdict(RunVerdict),
    Incomplete,
}

/// Online tracker of the navigation failure criteria over 500-episode window
/// averages. A run fails when one of these holds for consecutive windows:
/// episode ≥ 5000 and average > 190 (5 windows), episode ≥ 10000 and
/// average > 150 (5 windows), or episode ≥ 10000 and average > 100
/// (10 windows).
#[derive(Debug, Clone, Default)]
pub struct NavFailureRules {
    over_190: u32,
    over_150: u32,
    over_100: u32,
}

impl NavFailureRules {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one window (identified by its last episode number); returns the
    /// index of the rule that fired, if any.
    pub fn observe(&mut self, window_end_episode: u32, average: f64) -> Option<u8> {
        self.over_190 = if window_end_episode >= 5_000 && average > 190.0 {
            self.over_190 + 1
        } else {
            0
        };
        self.over_150 = if window_end_episode >= 10_000 && average > 150.0 {
            self.over_150 + 1
        } else {
            0
        };
        self.over_100 = if window_end_episode >= 10_000 && average > 100.0 {
            self.over_100 + 1
        } else {
            0
        };
        if self.over_190 >= 5 {
            Some(1)
        } else if self.over_150 >= 5 {
            Some(2)
        } else if self.over_100 >= 10 {
            Some(3)
        } else {
            None
        }
    }
}

/// Replays the navigation rules over a run's windowed averages and test
/// results. Tests use the average step count over the 46 start positions;
/// a run that never failed is an overrun if either test average exceeds 20.
pub fn classify_navigation_run(
    windows: &[(u32, f64)],
    test1: Option<f64>,
    test2: Option<f64>,
) -> Classification {
    let mut rules = NavFailureRules::new();
    for &(end, avg) in windows {
        if rules.observe(end, avg).is_some() {
            return Classification::Verdict(RunVerdict::Failure);
        }
    }
    match (test1, test2) {
        (Some(a), Some(b)) => {
            if a > 20.0 || b > 20.0 {
                Classification::Verdict(RunVerdict::Overrun)
            } else {
                Classification::Verdict(RunVerdict::Success)
            }
        }
        _ => Classification::Incomplete,
    }
}

/// Crank classification from the two test averages (revolutions over the 50
/// test angles): failure iff the first average is below 20 or the final
/// average is above −20.
pub fn classify_crank_run(first: Option<f64>, last: Option<f64>) -> Classification {
    match (first, last) {
        (Some(a), Some(b)) => {
            if a < 20.0 || b > -20.0 {
                Classification::Verdict(RunVerdict::Failure)
            } else {
                Classification::Verdict(RunVerdict::Success)
            }
        }
        _ => Classification::Incomplete,
    }
}

// ---------------------------------------------------------------------------
// Learning curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based episode number at which the window ends.
    pub window_end: u32,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
    pub runs: usize,
    /// Set when the last window did not fill completely.
    pub partial: bool,
}

/// Non-overlapping window means of one run's per-episode values. A trailing
/// partial window is included and flagged.
pub fn window_means(series: &[f64], window: usize) -> Vec<(u32, f64, bool)> {
    assert!(window > 0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < series.len() {
        let end = (i + window).min(series.len());
        let chunk = &series[i..end];
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        out.push((end as u32, mean, chunk.len() < window));
        i = end;
    }
    out
}

/// Cross-run learning curve: per window, the mean and population standard
/// deviation of the runs' window means. Runs shorter than a window index stop
/// contributing to it.
pub fn learning_curve(runs: &[Vec<f64>], window: usize) -> Vec<CurvePoint> {
    let per_run: Vec<Vec<(u32, f64, bool)>> =
        runs.iter().map(|r| window_means(r, window)).collect();
    let max_windows = per_run.iter().map(|w| w.len()).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(max_windows);
    for wi in 0..max_windows {
        let points: Vec<&(u32, f64, bool)> =
            per_run.iter().filter_map(|w| w.get(wi)).collect();
        let n = points.len();
        let mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum::<f64>() / n as f64;
        curve.push(CurvePoint {
            window_end: points.iter().map(|p| p.0).max().unwrap(),
            mean,
            std: var.sqrt(),
            runs: n,
            partial: points.iter().any(|p| p.2),
        });
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{actor_network, ActorInit};
    use crate::seed::stream_rng;

    #[test]
    fn exponent_formula_on_synthetic_series() {
        // δ_t = δ₀·2^t telescopes to λ = ln 2 regardless of the horizon, and
        // a contracting pair gives −ln 2. Exercised through the same formula
        // the probe uses.
        let lambda = |deltas: &[f64]| -> f64 {
            let t_end = deltas.len() - 1;
            (deltas[t_end] / deltas[0]).ln() / t_end as f64
        };
        let growing: Vec<f64> = (0..20).map(|t| 1e-6 * 2f64.powi(t)).collect();
        assert!((lambda(&growing) - 2f64.ln()).abs() < 1e-12);
        let shrinking: Vec<f64> = (0..20).map(|t| 1e-6 * 0.5f64.powi(t)).collect();
        assert!((lambda(&shrinking) + 2f64.ln()).abs() < 1e-12);
        // Scaling every δ by a constant leaves λ unchanged.
        let scaled: Vec<f64> = growing.iter().map(|d| d * 123.0).collect();
        assert!((lambda(&scaled) - lambda(&growing)).abs() < 1e-12);
    }

    #[test]
    fn probe_leaves_network_untouched_and_is_deterministic() {
        let mut rng_for = |label: &str| stream_rng(6, 0, label);
        let actor = actor_network(
            122,
            40,
            20,
            2,
            5.0,
            true,
            ActorInit {
                input_amp: 0.2,
                inter_amp: 0.1,
                output_amp: 0.1,
                self_feedback_radius: 3.0,
            },
            &mut rng_for,
        );
        let before = serde_json::to_vec(&actor).unwrap();
        let probe = ProbeSettings::default();
        let cfg = NavConfig::default();
        let l1 = exploration_exponent(
            &actor,
            &cfg,
            false,
            (0.0, 0.0),
            &probe,
            &mut stream_rng(1, 0, "probe"),
        )
        .unwrap();
        let l2 = exploration_exponent(
            &actor,
            &cfg,
            false,
            (0.0, 0.0),
            &probe,
            &mut stream_rng(1, 0, "probe"),
        )
        .unwrap();
        assert_eq!(l1, l2);
        assert!(l1.is_some());
        assert_eq!(before, serde_json::to_vec(&actor).unwrap());
    }

    #[test]
    fn navigation_failure_rules() {
        // Clean run.
        let windows: Vec<(u32, f64)> = (1..=40).map(|i| (i * 500, 30.0)).collect();
        assert_eq!(
            classify_navigation_run(&windows, Some(12.0), Some(12.0)),
            Classification::Verdict(RunVerdict::Success)
        );

        // Five consecutive windows above 190 from episode 5000 on.
        let mut rules = NavFailureRules::new();
        let mut fired = None;
        for end in [5000u32, 5500, 6000, 6500, 7000] {
            fired = rules.observe(end, 195.0);
        }
        assert_eq!(fired, Some(1));

        // The same averages before episode 5000 never fire.
        let mut rules = NavFailureRules::new();
        for end in [500u32, 1000, 1500, 2000, 2500, 3000] {
            assert_eq!(rules.observe(end, 195.0), None);
        }

        // A break in the streak resets the counter.
        let mut rules = NavFailureRules::new();
        for end in [5000u32, 5500, 6000, 6500] {
            assert_eq!(rules.observe(end, 195.0), None);
        }
        assert_eq!(rules.observe(7000, 100.0), None);
        for end in [7500u32, 8000, 8500, 9000] {
            assert_eq!(rules.observe(end, 195.0), None);
        }

        // Ten consecutive windows above 100 after episode 10000.
        let mut rules = NavFailureRules::new();
        let mut fired = None;
        for i in 0..10u32 {
            fired = rules.observe(10_000 + i * 500, 120.0);
        }
        assert_eq!(fired, Some(3));
    }

    #[test]
    fn overrun_and_incomplete() {
        let windows: Vec<(u32, f64)> = (1..=80).map(|i| (i * 500, 30.0)).collect();
        assert_eq!(
            classify_navigation_run(&windows, Some(20.4), Some(10.0)),
            Classification::Verdict(RunVerdict::Overrun)
        );
        assert_eq!(
            classify_navigation_run(&windows, Some(10.0), None),
            Classification::Incomplete
        );
    }

    #[test]
    fn crank_classification() {
        assert_eq!(
            classify_crank_run(Some(28.0), Some(-27.0)),
            Classification::Verdict(RunVerdict::Success)
        );
        assert_eq!(
            classify_crank_run(Some(19.9), Some(-30.0)),
            Classification::Verdict(RunVerdict::Failure)
        );
        assert_eq!(
            classify_crank_run(Some(25.0), Some(-19.9)),
            Classification::Verdict(RunVerdict::Failure)
        );
        assert_eq!(classify_crank_run(None, None), Classification::Incomplete);
    }

    #[test]
    fn curve_fixture_matches_hand_computation() {
        // Constant episodes: flat curve, zero std.
        let flat = vec![vec![50.0; 1000]];
        let curve = learning_curve(&flat, 500);
        assert_eq!(curve.len(), 2);
        for p in &curve {
            assert_eq!(p.mean, 50.0);
            assert_eq!(p.std, 0.0);
            assert_eq!(p.runs, 1);
            assert!(!p.partial);
        }

        // Hand-built three-run fixture, window 2.
        let runs = vec![
            vec![1.0, 3.0, 5.0, 7.0],
            vec![2.0, 2.0, 6.0, 6.0],
            vec![0.0, 4.0, 4.0, 8.0],
        ];
        let curve = learning_curve(&runs, 2);
        // Window means per run: [2, 6], [2, 6], [2, 6] → mean 2/6, std 0.
        assert!((curve[0].mean - 2.0).abs() < 1e-12);
        assert!((curve[1].mean - 6.0).abs() < 1e-12);
        assert!(curve[0].std < 1e-12 && curve[1].std < 1e-12);

        let runs = vec![vec![1.0, 3.0], vec![5.0, 7.0]];
        let curve = learning_curve(&runs, 2);
        // Window means 2 and 6 → mean 4, population std 2.
        assert!((curve[0].mean - 4.0).abs() < 1e-12);
        assert!((curve[0].std - 2.0).abs() < 1e-12);

        // Window larger than the history: one partial window, flagged.
        let curve = learning_curve(&[vec![10.0, 20.0]], 500);
        assert_eq!(curve.len(), 1);
        assert!(curve[0].partial);
        assert!((curve[0].mean - 15.0).abs() < 1e-12);
    }
}
