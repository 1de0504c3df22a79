//! Sensitivity-based local learning: SAL, SRL, the per-neuron switch between
//! them, and output-weight regularization.
//!
//! A neuron's sensitivity `s = f'(U)·‖w‖` is the Euclidean norm of its output
//! gradient with respect to its input vector — the local contraction or
//! expansion factor of the neuron's processing. Sensitivity adjustment
//! learning (SAL) climbs the gradient of `s` whenever the long-run average
//! sensitivity falls below a target, keeping the system dynamics from
//! collapsing. Sensitivity-controlled RL (SRL) moves along the same gradient
//! scaled by `−td`: it lowers sensitivity around transitions that were better
//! than expected (making them reproducible) and raises it around worse ones
//! (making them exploratory). Both rules are local: a neuron's update reads
//! only its own weights, bias, cached inputs and output, and the scalar TD
//! error.
//!
//! For `f = tanh` the shared gradient direction, scaled by the neuron's time
//! scale Δt/τ, is
//!
//! ```text
//! g_w = (Δt/τ)·(1 − o²)·(w/‖w‖ − 2·o·‖w‖·x)
//! g_θ = −2·(Δt/τ)·o·(1 − o²)·‖w‖
//! ```
//!
//! with `Δ_SAL = +η_SAL·g` and `Δ_SRL = −η_SRL·td·g`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::mat::norm;
use crate::rnn::{BlockSource, Layer, Network, NetworkState, STEP_WIDTH};

/// Below this weight-vector norm the update direction `w/‖w‖` is undefined
/// and the update is skipped.
pub const WEIGHT_NORM_EPS: f64 = 1e-12;

/// Sensitivity of a tanh neuron: `(1 − tanh²(U))·‖w‖` for `U = u + θ`.
pub fn sensitivity(u_total: f64, w: &[f64]) -> f64 {
    let o = u_total.tanh();
    (1.0 - o * o) * norm(w)
}

/// Sensitivity expressed through the already-computed output.
pub fn sensitivity_from_output(o: f64, w_norm: f64) -> f64 {
    (1.0 - o * o) * w_norm
}

/// One step of the exponential moving average `s̄ ← (1−α)·s̄ + α·s`.
pub fn moving_average(prev: f64, sample: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * prev + alpha * sample
}

fn scaled_gradient(x: &[f64], w: &[f64], o: f64, tau: f64, coeff: f64) -> (Vec<f64>, f64) {
    let w_norm = norm(w);
    if w_norm <= WEIGHT_NORM_EPS {
        return (vec![0.0; w.len()], 0.0);
    }
    let a = STEP_WIDTH / tau;
    let fp = 1.0 - o * o;
    let dw: Vec<f64> = w
        .iter()
        .zip(x.iter())
        .map(|(wi, xi)| coeff * a * fp * (wi / w_norm - 2.0 * o * w_norm * xi))
        .collect();
    let dtheta = coeff * (-2.0) * a * o * fp * w_norm;
    (dw, dtheta)
}

/// SAL update `(Δw, Δθ)` for one neuron; the caller applies it.
pub fn sal_update(x: &[f64], w: &[f64], o: f64, tau: f64, eta_sal: f64) -> (Vec<f64>, f64) {
    scaled_gradient(x, w, o, tau, eta_sal)
}

/// SRL update `(Δw, Δθ)` for one neuron given the TD error of the following
/// transition. `td = −1` reproduces SAL with the same rate exactly.
pub fn srl_update(x: &[f64], w: &[f64], o: f64, tau: f64, eta_srl: f64, td: f64) -> (Vec<f64>, f64) {
    scaled_gradient(x, w, o, tau, -eta_srl * td)
}

/// ΔW = −η·W, the decrement applied to the actor output-layer weights.
pub fn regularization_delta(w: &crate::mat::Mat, eta_reg: f64) -> crate::mat::Mat {
    let mut d = w.clone();
    d.scale(-eta_reg);
    d
}

/// Applies `W ← (1 − η)·W` to every output-layer weight block.
pub fn regularize_output_weights(net: &mut Network, eta_reg: f64) {
    let out = net.output_layer();
    for b in &mut net.layers[out].blocks {
        b.weights.scale(1.0 - eta_reg);
    }
}

// ---------------------------------------------------------------------------
// Moving-average tracker and branch selection
// ---------------------------------------------------------------------------

/// Per-neuron moving average of sensitivity, maintained across episodes.
///
/// Each average starts at the first sensitivity the neuron exhibits (an
/// explicit initial value can be configured instead; with a small α a fixed
/// start would dominate for thousands of steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTracker {
    pub alpha: f64,
    pub s_th: f64,
    /// If set, pause the average while the neuron is on the SRL branch.
    pub freeze_during_srl: bool,
    s_bar: Vec<Vec<Option<f64>>>,
}

impl SensitivityTracker {
    pub fn new(
        net: &Network,
        alpha: f64,
        s_th: f64,
        initial: Option<f64>,
        freeze_during_srl: bool,
    ) -> Self {
        SensitivityTracker {
            alpha,
            s_th,
            freeze_during_srl,
            s_bar: net
                .layers
                .iter()
                .map(|l| vec![initial; l.size])
                .collect(),
        }
    }

    /// Feeds one sensitivity sample and returns whether the SAL branch is
    /// active for this neuron (`s̄ < s_th`).
    pub fn observe(&mut self, layer: usize, neuron: usize, s: f64) -> bool {
        let slot = &mut self.s_bar[layer][neuron];
        match *slot {
            None => {
                *slot = Some(s);
                s < self.s_th
            }
            Some(prev) => {
                if self.freeze_during_srl && prev >= self.s_th {
                    false
                } else {
                    let next = moving_average(prev, s, self.alpha);
                    *slot = Some(next);
                    next < self.s_th
                }
            }
        }
    }

    pub fn value(&self, layer: usize, neuron: usize) -> Option<f64> {
        self.s_bar[layer][neuron]
    }

    pub fn set(&mut self, layer: usize, neuron: usize, v: f64) {
        self.s_bar[layer][neuron] = Some(v);
    }
}

// ---------------------------------------------------------------------------
// Learning conditions
// ---------------------------------------------------------------------------

/// The six per-block combinations of learning rules for the actor network.
///
/// `A`-family conditions train the actor with the local sensitivity rules,
/// `B`-family conditions with gradient descent on the noise-derived training
/// signal. In every condition the output layer also receives weight
/// regularization, and the critic is trained by truncated BPTT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningCondition {
    /// SRL on all blocks, switched with SAL on hidden neurons.
    A,
    /// No SRL on hidden-to-hidden blocks (SAL only there).
    #[serde(rename = "A-1")]
    A1,
    /// No SAL anywhere; SRL applied unconditionally.
    #[serde(rename = "A-2")]
    A2,
    /// Conventional: BPTT on hidden blocks, no SAL.
    B,
    /// Conventional: BPTT plus SAL on hidden neurons.
    #[serde(rename = "B-1")]
    B1,
    /// Conventional: single-step backpropagation (no traversal of the
    /// previous-step links) plus SAL on hidden neurons.
    #[serde(rename = "B-2")]
    B2,
}

pub const ALL_CONDITIONS: [LearningCondition; 6] = [
    LearningCondition::A,
    LearningCondition::A1,
    LearningCondition::A2,
    LearningCondition::B,
    LearningCondition::B1,
    LearningCondition::B2,
];

impl LearningCondition {
    pub fn is_dynamic(&self) -> bool {
        matches!(
            self,
            LearningCondition::A | LearningCondition::A1 | LearningCondition::A2
        )
    }

    /// Whether conventional training propagates errors through the
    /// previous-step links (false = within-step backpropagation only).
    pub fn through_time(&self) -> bool {
        matches!(self, LearningCondition::B | LearningCondition::B1)
    }

    /// Whether SAL runs in parallel with conventional training.
    pub fn conventional_sal(&self) -> bool {
        matches!(self, LearningCondition::B1 | LearningCondition::B2)
    }

    fn dyn_rule(&self, group: BlockGroup) -> DynBlockRule {
        match group {
            BlockGroup::HiddenToOutput => DynBlockRule::SrlAlways,
            BlockGroup::InputToHidden => match self {
                LearningCondition::A | LearningCondition::A1 => DynBlockRule::Switched,
                LearningCondition::A2 => DynBlockRule::SrlAlways,
                _ => unreachable!("dynamic rule queried for conventional condition"),
            },
            BlockGroup::HiddenToHidden => match self {
                LearningCondition::A => DynBlockRule::Switched,
                LearningCondition::A1 => DynBlockRule::SalOnly,
                LearningCondition::A2 => DynBlockRule::SrlAlways,
                _ => unreachable!("dynamic rule queried for conventional condition"),
            },
        }
    }
}

impl fmt::Display for LearningCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LearningCondition::A => "A",
            LearningCondition::A1 => "A-1",
            LearningCondition::A2 => "A-2",
            LearningCondition::B => "B",
            LearningCondition::B1 => "B-1",
            LearningCondition::B2 => "B-2",
        };
        f.write_str(s)
    }
}

impl FromStr for LearningCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(LearningCondition::A),
            "A-1" => Ok(LearningCondition::A1),
            "A-2" => Ok(LearningCondition::A2),
            "B" => Ok(LearningCondition::B),
            "B-1" => Ok(LearningCondition::B1),
            "B-2" => Ok(LearningCondition::B2),
            _ => Err(format!(
                "unknown learning condition `{s}` (valid: A, A-1, A-2, B, B-1, B-2)"
            )),
        }
    }
}

/// Coarse classification of a weight block for the condition table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockGroup {
    InputToHidden,
    HiddenToHidden,
    HiddenToOutput,
}

pub fn block_group(net: &Network, layer_idx: usize, block_idx: usize) -> BlockGroup {
    if layer_idx == net.output_layer() {
        BlockGroup::HiddenToOutput
    } else {
        match net.layers[layer_idx].blocks[block_idx].source {
            BlockSource::Input => BlockGroup::InputToHidden,
            BlockSource::Layer(_) => BlockGroup::HiddenToHidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DynBlockRule {
    /// SAL when the neuron's s̄ is below target, SRL otherwise.
    Switched,
    /// Only the SAL branch touches this block.
    SalOnly,
    /// SRL every step, regardless of the branch.
    SrlAlways,
}

// ---------------------------------------------------------------------------
// Per-block learning rates
// ---------------------------------------------------------------------------

/// Learning rates aligned with a network's layer/block structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRates {
    /// `weights[layer][block]`.
    pub weights: Vec<Vec<f64>>,
    /// `bias[layer]`.
    pub bias: Vec<f64>,
}

impl BlockRates {
    /// Builds the table from `(block name, rate)` and `(layer name, rate)`
    /// pairs; every block and bias of the network must be named.
    pub fn from_named(net: &Network, weight_rates: &[(&str, f64)], bias_rates: &[(&str, f64)]) -> Self {
        let lookup = |name: &str, table: &[(&str, f64)]| -> f64 {
            table
                .iter()
                .find(|(n, _)| *n == name)
                .unwrap_or_else(|| panic!("no learning rate for `{name}`"))
                .1
        };
        BlockRates {
            weights: net
                .layers
                .iter()
                .map(|l| l.blocks.iter().map(|b| lookup(&b.name, weight_rates)).collect())
                .collect(),
            bias: net
                .layers
                .iter()
                .map(|l| lookup(&l.name, bias_rates))
                .collect(),
        }
    }
}

/// Rates for the Dynamic-RL actor: per-block SRL rates plus the global
/// SAL/SRL rate ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynRates {
    pub srl: BlockRates,
    /// η_SAL = factor · η_SRL on every block.
    pub sal_factor: f64,
}

// ---------------------------------------------------------------------------
// In-place application
// ---------------------------------------------------------------------------

/// Adds `coeff_b·g_w` per block and `bias_coeff·g_θ` to one neuron, where `g`
/// is the sensitivity gradient scaled by Δt/τ. `x` is the neuron's cached
/// concatenated input, `o` its cached output, `w_norm` the norm of its full
/// weight vector at the time the step was computed.
fn apply_to_neuron(
    layer: &mut Layer,
    neuron: usize,
    x: &[f64],
    o: f64,
    w_norm: f64,
    block_coeffs: &[f64],
    bias_coeff: f64,
) {
    if w_norm <= WEIGHT_NORM_EPS {
        return;
    }
    let a = STEP_WIDTH / layer.tau;
    let fp = 1.0 - o * o;
    let two_o_norm = 2.0 * o * w_norm;
    let inv_norm = 1.0 / w_norm;
    let mut off = 0;
    for (b, &coeff) in layer.blocks.iter_mut().zip(block_coeffs.iter()) {
        let cols = b.weights.cols();
        if coeff != 0.0 {
            let c = coeff * a * fp;
            let row = b.weights.row_mut(neuron);
            let xb = &x[off..off + cols];
            for (wi, xi) in row.iter_mut().zip(xb.iter()) {
                *wi += c * (*wi * inv_norm - two_o_norm * xi);
            }
        }
        off += cols;
    }
    if bias_coeff != 0.0 {
        layer.bias[neuron] += bias_coeff * (-2.0) * a * o * fp * w_norm;
    }
}

/// One Dynamic-RL update of the whole actor for the pending step.
///
/// `state` still holds the pending step's cached inputs and outputs;
/// `w_norms` and `sal_branch` were recorded when that step was computed.
/// Hidden neurons take the branch recorded per neuron; output neurons always
/// take SRL. Regularization is applied separately.
pub fn dynamic_rl_step(
    net: &mut Network,
    state: &NetworkState,
    w_norms: &[Vec<f64>],
    sal_branch: &[Vec<bool>],
    td: f64,
    condition: LearningCondition,
    rates: &DynRates,
) {
    debug_assert!(condition.is_dynamic());
    let out_layer = net.output_layer();
    for li in 0..net.layers.len() {
        let rules: Vec<DynBlockRule> = (0..net.layers[li].blocks.len())
            .map(|bi| condition.dyn_rule(block_group(net, li, bi)))
            .collect();
        let layer = &mut net.layers[li];
        let mut coeffs = vec![0.0; layer.blocks.len()];
        for n in 0..layer.size {
            let sal = li != out_layer && sal_branch[li][n];
            let mut sal_fired = false;
            let mut srl_fired = false;
            for (bi, rule) in rules.iter().enumerate() {
                let eta = rates.srl.weights[li][bi];
                coeffs[bi] = match rule {
                    DynBlockRule::Switched => {
                        if sal {
                            sal_fired = true;
                            rates.sal_factor * eta
                        } else {
                            srl_fired = true;
                            -eta * td
                        }
                    }
                    DynBlockRule::SalOnly => {
                        if sal {
                            sal_fired = true;
                            rates.sal_factor * eta
                        } else {
                            0.0
                        }
                    }
                    DynBlockRule::SrlAlways => {
                        srl_fired = true;
                        -eta * td
                    }
                };
            }
            debug_assert!(
                !(sal_fired && srl_fired),
                "a neuron must not take both branches in one step"
            );
            let bias_eta = rates.srl.bias[li];
            let bias_coeff = if sal_fired {
                rates.sal_factor * bias_eta
            } else if srl_fired {
                -bias_eta * td
            } else {
                0.0
            };
            apply_to_neuron(
                layer,
                n,
                &state.x[li],
                state.o[li][n],
                w_norms[li][n],
                &coeffs,
                bias_coeff,
            );
        }
    }
}

/// SAL applied in parallel with conventional training: hidden neurons whose
/// average sensitivity is below target climb the sensitivity gradient with
/// the dedicated SAL rates; output neurons are untouched.
pub fn conventional_sal_step(
    net: &mut Network,
    state: &NetworkState,
    w_norms: &[Vec<f64>],
    sal_branch: &[Vec<bool>],
    sal_rates: &BlockRates,
) {
    let out_layer = net.output_layer();
    for li in 0..net.layers.len() {
        if li == out_layer {
            continue;
        }
        let layer = &mut net.layers[li];
        let mut coeffs = vec![0.0; layer.blocks.len()];
        for n in 0..layer.size {
            if !sal_branch[li][n] {
                continue;
            }
            for (bi, c) in coeffs.iter_mut().enumerate() {
                *c = sal_rates.weights[li][bi];
            }
            apply_to_neuron(
                layer,
                n,
                &state.x[li],
                state.o[li][n],
                w_norms[li][n],
                &coeffs,
                sal_rates.bias[li],
            );
        }
    }
}

/// Computes every neuron's sensitivity from the freshly stepped network,
/// feeds the tracker, and records the branch each neuron would take.
pub fn observe_sensitivities(
    net: &Network,
    state: &NetworkState,
    tracker: &mut SensitivityTracker,
    w_norms: &mut [Vec<f64>],
    sal_branch: &mut [Vec<bool>],
) {
    for (li, layer) in net.layers.iter().enumerate() {
        for n in 0..layer.size {
            let wn = layer.neuron_weight_norm(n);
            w_norms[li][n] = wn;
            let s = sensitivity_from_output(state.o[li][n], wn);
            sal_branch[li][n] = tracker.observe(li, n, s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{actor_network, names, ActorInit, NetworkState};
    use crate::seed::stream_rng;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, 0, "test")
    }

    #[test]
    fn sensitivity_examples() {
        assert!((sensitivity(0.0, &[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((sensitivity(0.0, &[3.0, 4.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn sensitivity_matches_finite_difference_gradient_norm() {
        let mut r = rng(3);
        for _ in 0..200 {
            let m = r.random_range(2..6);
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.5..1.5)).collect();
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let theta: f64 = r.random_range(-0.5..0.5);
            let u: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta;
            let s = sensitivity(u, &w);

            let h = 1e-6;
            let mut grad_sq = 0.0;
            for i in 0..m {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let op = (w.iter().zip(&xp).map(|(a, b)| a * b).sum::<f64>() + theta).tanh();
                let om = (w.iter().zip(&xm).map(|(a, b)| a * b).sum::<f64>() + theta).tanh();
                let g = (op - om) / (2.0 * h);
                grad_sq += g * g;
            }
            let s_fd = grad_sq.sqrt();
            assert!(
                (s - s_fd).abs() <= 1e-6 * s_fd.max(1e-9),
                "s={s} fd={s_fd}"
            );
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(1.0, 1.0, 0.001), 1.0);
        assert_eq!(moving_average(0.0, 1.0, 0.5), 0.5);
        // Constant stream converges geometrically at rate (1−α).
        let (c, alpha) = (0.7, 0.01);
        let mut s = 3.0f64;
        for t in 1..=2000 {
            s = moving_average(s, c, alpha);
            let expected = c + (3.0 - c) * (1.0 - alpha).powi(t);
            assert!((s - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn sal_at_origin_and_saturation() {
        let x = [0.3, -0.2];
        let w = [0.6, 0.8];
        // o = 0: Δw = η·(Δt/τ)·w/‖w‖, Δθ = 0.
        let (dw, dth) = sal_update(&x, &w, 0.0, 2.0, 0.1);
        assert!((dw[0] - 0.1 * 0.5 * 0.6).abs() < 1e-15);
        assert!((dw[1] - 0.1 * 0.5 * 0.8).abs() < 1e-15);
        assert_eq!(dth, 0.0);
        // o = ±1: everything vanishes.
        for o in [1.0, -1.0] {
            let (dw, dth) = sal_update(&x, &w, o, 1.0, 0.1);
            assert!(dw.iter().all(|&v| v == 0.0));
            assert_eq!(dth, 0.0);
        }
    }

    #[test]
    fn srl_zero_td_and_sign_symmetry() {
        let x = [0.5, -1.0, 0.25];
        let w = [0.3, 0.9, -0.4];
        let (dw, dth) = srl_update(&x, &w, 0.4, 5.0, 0.01, 0.0);
        assert!(dw.iter().all(|&v| v == 0.0));
        assert_eq!(dth, 0.0);

        // td = −1 reproduces SAL with the same rate exactly.
        let (dw_srl, dth_srl) = srl_update(&x, &w, 0.4, 5.0, 0.01, -1.0);
        let (dw_sal, dth_sal) = sal_update(&x, &w, 0.4, 5.0, 0.01);
        for (a, b) in dw_srl.iter().zip(dw_sal.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!((dth_srl - dth_sal).abs() <= 1e-15);
    }

    #[test]
    fn srl_is_negative_td_multiple_of_sal() {
        let mut r = rng(11);
        for _ in 0..200 {
            let m = r.random_range(2..5);
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let o: f64 = r.random_range(-0.99..0.99);
            let td: f64 = r.random_range(-2.0..2.0);
            if td == 0.0 {
                continue;
            }
            let eta = 0.01;
            let (dw_srl, dth_srl) = srl_update(&x, &w, o, 5.0, eta, td);
            let (dw_sal, dth_sal) = sal_update(&x, &w, o, 5.0, eta * td.abs());
            let sign = -td / td.abs();
            for (a, b) in dw_srl.iter().zip(dw_sal.iter()) {
                assert!((a - sign * b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
            assert!((dth_srl - sign * dth_sal).abs() <= 1e-12 * dth_sal.abs().max(1e-12));
        }
    }

    #[test]
    fn degenerate_weight_vector_is_guarded() {
        let (dw, dth) = sal_update(&[1.0, 1.0], &[0.0, 0.0], 0.5, 1.0, 0.1);
        assert!(dw.iter().all(|&v| v == 0.0));
        assert_eq!(dth, 0.0);
    }

    /// Central-difference gradient of s(w, θ) = (1 − tanh²(w·x+θ))·‖w‖.
    fn fd_sensitivity_grad(x: &[f64], w: &[f64], theta: f64) -> (Vec<f64>, f64) {
        let s_of = |w: &[f64], theta: f64| {
            let u: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta;
            sensitivity(u, w)
        };
        let h = 1e-6;
        let mut gw = vec![0.0; w.len()];
        for i in 0..w.len() {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            gw[i] = (s_of(&wp, theta) - s_of(&wm, theta)) / (2.0 * h);
        }
        let gt = (s_of(w, theta + h) - s_of(w, theta - h)) / (2.0 * h);
        (gw, gt)
    }

    #[test]
    fn sal_is_the_sensitivity_gradient() {
        let mut r = rng(17);
        for _ in 0..300 {
            let m = r.random_range(2..6);
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.2..1.2)).collect();
            if norm(&w) < 0.1 {
                continue;
            }
            let theta: f64 = r.random_range(-0.5..0.5);
            let tau: f64 = if r.random_range(0..2) == 0 { 1.0 } else { 5.0 };
            let u: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta;
            let o = u.tanh();
            let eta = 1.0;
            let (dw, dth) = sal_update(&x, &w, o, tau, eta);
            let (gw, gt) = fd_sensitivity_grad(&x, &w, theta);
            let scale = STEP_WIDTH / tau;
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, g) in dw.iter().zip(gw.iter()) {
                num += (a - scale * g) * (a - scale * g);
                den += (scale * g) * (scale * g);
            }
            num += (dth - scale * gt) * (dth - scale * gt);
            den += (scale * gt) * (scale * gt);
            assert!(
                num.sqrt() <= 1e-5 * den.sqrt().max(1e-9),
                "gradient mismatch: {} vs {}",
                num.sqrt(),
                den.sqrt()
            );
        }
    }

    #[test]
    fn sal_increases_sensitivity_first_order() {
        let mut r = rng(23);
        let mut increased = 0;
        let mut total = 0;
        for _ in 0..400 {
            let m = r.random_range(3..8);
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            if norm(&w) < 0.2 {
                continue;
            }
            let theta: f64 = r.random_range(-0.5..0.5);
            let u: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta;
            let o = u.tanh();
            if o.abs() > 0.95 {
                continue;
            }
            let eta = 1e-5;
            let (dw, dth) = sal_update(&x, &w, o, 1.0, eta);
            let w2: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
            let u2: f64 = w2.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta + dth;
            let s_before = sensitivity(u, &w);
            let s_after = sensitivity(u2, &w2);
            total += 1;
            if s_after > s_before {
                increased += 1;
            }
            // First-order prediction Δs ≈ η·(Δt/τ)·‖∇s‖² for small η.
            let (gw, gt) = fd_sensitivity_grad(&x, &w, theta);
            let g2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gt * gt;
            let predicted = eta * g2;
            if predicted > 1e-8 {
                let actual = s_after - s_before;
                assert!(
                    (actual - predicted).abs() <= 0.05 * predicted,
                    "Δs {actual} vs prediction {predicted}"
                );
            }
        }
        assert!(total > 200);
        assert!(
            increased as f64 >= 0.95 * total as f64,
            "only {increased}/{total} increased"
        );
    }

    #[test]
    fn srl_with_positive_td_decreases_sensitivity() {
        let mut r = rng(29);
        for _ in 0..100 {
            let m = 5;
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            if norm(&w) < 0.3 {
                continue;
            }
            let theta = 0.1;
            let u: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta;
            let o = u.tanh();
            if o.abs() > 0.9 {
                continue;
            }
            let (gw, gt) = fd_sensitivity_grad(&x, &w, theta);
            let g2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gt * gt;
            if g2 < 1e-6 {
                continue;
            }
            let (dw, dth) = srl_update(&x, &w, o, 1.0, 1e-5, 0.1);
            let w2: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
            let u2: f64 = w2.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta + dth;
            assert!(sensitivity(u2, &w2) < sensitivity(u, &w));
        }
    }

    #[test]
    fn regularization_decays_weights_geometrically() {
        let mut w = crate::mat::Mat::from_row_major(1, 2, vec![1.0, -0.5]);
        let d = regularization_delta(&w, 1e-6);
        assert!((d.get(0, 0) + 1e-6).abs() < 1e-18);
        let eta = 1e-3;
        let w0 = w.get(0, 0);
        for t in 1..=1000 {
            let delta = regularization_delta(&w, eta);
            w.add_scaled(1.0, &delta);
            let expected = w0 * (1.0 - eta).powi(t);
            assert!((w.get(0, 0) - expected).abs() < 1e-12);
        }
    }

    fn tiny_actor(seed: u64) -> (Network, NetworkState) {
        let mut rng_for = |label: &str| stream_rng(seed, 0, label);
        let net = actor_network(
            3,
            4,
            3,
            2,
            5.0,
            true,
            ActorInit {
                input_amp: 0.4,
                inter_amp: 0.3,
                output_amp: 0.5,
                self_feedback_radius: 1.5,
            },
            &mut rng_for,
        );
        let state = NetworkState::new(&net);
        (net, state)
    }

    fn full_rates(net: &Network, eta: f64) -> DynRates {
        DynRates {
            srl: BlockRates {
                weights: net.layers.iter().map(|l| vec![eta; l.blocks.len()]).collect(),
                bias: vec![eta; net.layers.len()],
            },
            sal_factor: 0.1,
        }
    }

    fn observe(net: &Network, state: &NetworkState, tracker: &mut SensitivityTracker) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        let mut norms: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.size]).collect();
        let mut branch: Vec<Vec<bool>> = net.layers.iter().map(|l| vec![false; l.size]).collect();
        observe_sensitivities(net, state, tracker, &mut norms, &mut branch);
        (norms, branch)
    }

    #[test]
    fn switch_takes_exactly_one_branch() {
        let (net, mut state) = tiny_actor(31);
        let mut tracker = SensitivityTracker::new(&net, 0.5, 1.3, None, false);
        net.step(&mut state, &[0.5, -0.5, 0.25]);
        let (_, branch) = observe(&net, &state, &mut tracker);
        // Force a mix of branches, then check the table wiring.
        let hid1 = net.layer_index(names::HID1).unwrap();
        assert!(branch[hid1].iter().any(|_| true));
        // A neuron with s̄ just below target takes SAL; at/above takes SRL.
        let mut t2 = SensitivityTracker::new(&net, 0.001, 1.3, Some(1.29), false);
        assert!(t2.observe(0, 0, 1.29));
        let mut t3 = SensitivityTracker::new(&net, 0.001, 1.3, Some(1.31), false);
        assert!(!t3.observe(0, 0, 1.31));
    }

    #[test]
    fn condition_table_controls_blocks() {
        // With td > 0 and SRL, weights move; with SAL-only blocks on the SRL
        // branch, the hidden-to-hidden block must stay put.
        let (mut net, mut state) = tiny_actor(37);
        let mut tracker = SensitivityTracker::new(&net, 0.001, 1.3, Some(10.0), false);
        net.step(&mut state, &[0.5, -0.5, 0.25]);
        let (norms, branch) = observe(&net, &state, &mut tracker);
        // s̄ = 10 ≥ s_th for every neuron: all on the SRL branch.
        assert!(branch.iter().flatten().all(|&b| !b));
        let rates = full_rates(&net, 0.01);

        let before = net.clone();
        let mut a1 = net.clone();
        dynamic_rl_step(&mut a1, &state, &norms, &branch, 0.5, LearningCondition::A1, &rates);
        let hid1 = net.layer_index(names::HID1).unwrap();
        let hid2 = net.layer_index(names::HID2).unwrap();
        // A-1: hidden-to-hidden blocks untouched on the SRL branch...
        assert_eq!(a1.layers[hid1].blocks[1].weights, before.layers[hid1].blocks[1].weights);
        assert_eq!(a1.layers[hid2].blocks[0].weights, before.layers[hid2].blocks[0].weights);
        // ...while input-to-hidden and output blocks move.
        assert_ne!(a1.layers[hid1].blocks[0].weights, before.layers[hid1].blocks[0].weights);
        assert_ne!(
            a1.layers[net.output_layer()].blocks[0].weights,
            before.layers[net.output_layer()].blocks[0].weights
        );

        // A-2 with all neurons nominally on the SAL branch still applies SRL.
        let all_sal: Vec<Vec<bool>> = branch.iter().map(|l| vec![true; l.len()]).collect();
        let mut a2 = net.clone();
        dynamic_rl_step(&mut a2, &state, &norms, &all_sal, 0.5, LearningCondition::A2, &rates);
        assert_ne!(a2.layers[hid1].blocks[1].weights, before.layers[hid1].blocks[1].weights);

        dynamic_rl_step(&mut net, &state, &norms, &branch, 0.0, LearningCondition::A, &rates);
        // td = 0 on the SRL branch: nothing moves.
        assert_eq!(net, before);
    }

    #[test]
    fn updates_are_local_to_each_neuron() {
        let (net, mut state) = tiny_actor(41);
        let mut tracker = SensitivityTracker::new(&net, 0.001, 1.3, Some(0.5), false);
        net.step(&mut state, &[0.2, 0.8, -0.3]);
        let (norms, branch) = observe(&net, &state, &mut tracker);
        let rates = full_rates(&net, 0.01);

        let mut u1 = net.clone();
        dynamic_rl_step(&mut u1, &state, &norms, &branch, 0.3, LearningCondition::A, &rates);

        // Perturb a different neuron's weights; neuron 0's update is unchanged.
        let mut net2 = net.clone();
        net2.layers[0].blocks[0].row_weights_perturb(1, 10.0);
        let norms2 = {
            let mut n2: Vec<Vec<f64>> = net2.layers.iter().map(|l| vec![0.0; l.size]).collect();
            for (li, l) in net2.layers.iter().enumerate() {
                for n in 0..l.size {
                    n2[li][n] = l.neuron_weight_norm(n);
                }
            }
            n2
        };
        let mut u2 = net2.clone();
        dynamic_rl_step(&mut u2, &state, &norms2, &branch, 0.3, LearningCondition::A, &rates);
        let d1: Vec<f64> = u1.layers[0].blocks[0]
            .weights
            .row(0)
            .iter()
            .zip(net.layers[0].blocks[0].weights.row(0))
            .map(|(a, b)| a - b)
            .collect();
        let d2: Vec<f64> = u2.layers[0].blocks[0]
            .weights
            .row(0)
            .iter()
            .zip(net2.layers[0].blocks[0].weights.row(0))
            .map(|(a, b)| a - b)
            .collect();
        assert_eq!(d1, d2);
    }

    #[test]
    fn frozen_average_pauses_on_srl_branch() {
        let sizes = Network {
            input_size: 1,
            layers: vec![],
        };
        let _ = sizes; // tracker built directly below
        let mut t = SensitivityTracker {
            alpha: 0.5,
            s_th: 1.0,
            freeze_during_srl: true,
            s_bar: vec![vec![Some(2.0)]],
        };
        assert!(!t.observe(0, 0, 0.1));
        assert_eq!(t.value(0, 0), Some(2.0));
        let mut t2 = SensitivityTracker {
            alpha: 0.5,
            s_th: 1.0,
            freeze_during_srl: true,
            s_bar: vec![vec![Some(0.5)]],
        };
        assert!(t2.observe(0, 0, 0.7));
        assert_eq!(t2.value(0, 0), Some(0.6));
    }
}

#[cfg(test)]
impl crate::rnn::Block {
    /// Test helper: bump one row by a constant.
    fn row_weights_perturb(&mut self, row: usize, delta: f64) {
        for w in self.weights.row_mut(row) {
            *w += delta;
        }
    }
}
