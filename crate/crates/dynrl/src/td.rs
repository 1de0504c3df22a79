//! TD error, critic raising, and gradient training through a truncated
//! window: the critic is always trained this way, and the conventional
//! baseline trains the actor on noise-derived training signals with the same
//! machinery.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::learning::BlockRates;
use crate::mat::Mat;
use crate::rnn::{BlockSource, BlockTiming, Network, NetworkState};
use crate::Error;

/// One temporal-difference transition.
#[derive(Debug, Clone, Copy)]
pub struct TdContext {
    pub gamma: f64,
    /// Reinforcement signal received on the transition.
    pub reward: f64,
    /// Critic output before the transition.
    pub value: f64,
    /// Critic output after the transition (ignored on terminal transitions).
    pub next_value: f64,
    pub terminal: bool,
}

impl TdContext {
    /// `r̂ = γ·C_{t+1} + r_{t+1} − C_t`, with the next value taken as zero on
    /// terminal transitions.
    pub fn error(&self) -> f64 {
        let next = if self.terminal { 0.0 } else { self.next_value };
        self.gamma * next + self.reward - self.value
    }
}

/// Optimistic-value bias boost: when the long-run average critic output sits
/// below a threshold, the critic's output bias is nudged upward so the value
/// landscape keeps a usable gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticRaiser {
    pub beta: f64,
    pub c_th: f64,
    pub eta_raise: f64,
    c_bar: f64,
}

impl CriticRaiser {
    pub fn new(beta: f64, c_th: f64, eta_raise: f64) -> Self {
        CriticRaiser {
            beta,
            c_th,
            eta_raise,
            c_bar: 0.0,
        }
    }

    /// Feeds one critic output into the moving average (kept across episodes).
    pub fn observe(&mut self, c: f64) {
        self.c_bar = (1.0 - self.beta) * self.c_bar + self.beta * c;
    }

    /// Bias increment for this step; zero once the average reaches threshold.
    pub fn raise_amount(&self) -> f64 {
        if self.c_bar < self.c_th {
            self.eta_raise * (self.c_th - self.c_bar)
        } else {
            0.0
        }
    }

    pub fn average(&self) -> f64 {
        self.c_bar
    }
}

/// Snapshot of one forward step: per-layer concatenated inputs and outputs.
/// Together with the shared weights this is everything the backward pass
/// needs (`f'(U) = 1 − o²` for tanh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSnapshot {
    pub x: Vec<Vec<f64>>,
    pub o: Vec<Vec<f64>>,
}

impl StepSnapshot {
    pub fn capture(state: &NetworkState) -> Self {
        StepSnapshot {
            x: state.x.clone(),
            o: state.o.clone(),
        }
    }
}

/// Ring buffer of the most recent forward steps, cleared on episode reset.
#[derive(Debug, Clone)]
pub struct BpttBuffer {
    cap: usize,
    steps: VecDeque<StepSnapshot>,
}

impl BpttBuffer {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "truncation window must hold at least one step");
        BpttBuffer {
            cap,
            steps: VecDeque::with_capacity(cap + 1),
        }
    }

    pub fn push(&mut self, snap: StepSnapshot) {
        if self.steps.len() == self.cap {
            self.steps.pop_front();
        }
        self.steps.push_back(snap);
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Oldest-to-newest view of the stored steps.
    pub fn snapshots(&self) -> Vec<&StepSnapshot> {
        self.steps.iter().collect()
    }
}

/// Accumulated gradients aligned with a network's blocks and biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<Mat>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| {
                    l.blocks
                        .iter()
                        .map(|b| Mat::zeros(b.weights.rows(), b.weights.cols()))
                        .collect()
                })
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.size]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for layer in &mut self.weights {
            for m in layer {
                m.fill(0.0);
            }
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Reusable scratch space for the backward pass.
#[derive(Debug, Clone)]
pub struct BpttWorkspace {
    d_o: Vec<Vec<f64>>,
    d_o_prev: Vec<Vec<f64>>,
    d_u_next: Vec<Vec<f64>>,
    du: Vec<Vec<f64>>,
}

impl BpttWorkspace {
    pub fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.size]).collect();
        BpttWorkspace {
            d_o: zeros.clone(),
            d_o_prev: zeros.clone(),
            d_u_next: zeros.clone(),
            du: zeros,
        }
    }

    fn reset(&mut self) {
        for v in self
            .d_o
            .iter_mut()
            .chain(self.d_o_prev.iter_mut())
            .chain(self.d_u_next.iter_mut())
            .chain(self.du.iter_mut())
        {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
    }
}

/// Backpropagates a squared-error gradient injected at the output layer of
/// the newest stored step through the unrolled window, accumulating parameter
/// gradients into `grads` (which is reset first).
///
/// `output_error` is `∂L/∂o_out` at the top step. With `through_time` unset,
/// errors do not traverse the previous-step links (feedback inputs and the
/// leak of dynamic neurons are treated as constants), which is identical to a
/// window of one step.
pub fn accumulate_gradients(
    net: &Network,
    buffer: &BpttBuffer,
    output_error: &[f64],
    through_time: bool,
    ws: &mut BpttWorkspace,
    grads: &mut Gradients,
) {
    grads.reset();
    if buffer.is_empty() {
        return;
    }
    ws.reset();
    let steps = buffer.snapshots();
    let top = steps.len() - 1;
    let bottom = if through_time { 0 } else { top };
    let out_layer = net.output_layer();
    ws.d_o[out_layer].copy_from_slice(output_error);

    for k in (bottom..=top).rev() {
        let snap = steps[k];
        for li in (0..net.layers.len()).rev() {
            let layer = &net.layers[li];
            let a = layer.leak();
            let d_o_li = std::mem::take(&mut ws.d_o[li]);
            // du = do ⊙ f'(U) + (1 − a)·du_next; bias picks up do ⊙ f'(U).
            let du = &mut ws.du[li];
            let mut active = false;
            for i in 0..layer.size {
                let o = snap.o[li][i];
                let fp = 1.0 - o * o;
                let direct = d_o_li[i] * fp;
                grads.bias[li][i] += direct;
                let v = direct + (1.0 - a) * ws.d_u_next[li][i];
                du[i] = v;
                active |= v != 0.0;
            }
            ws.d_o[li] = d_o_li;
            ws.d_o[li].iter_mut().for_each(|e| *e = 0.0);
            if active {
                let mut off = 0;
                for (bi, b) in layer.blocks.iter().enumerate() {
                    let cols = b.weights.cols();
                    let xb = &snap.x[li][off..off + cols];
                    grads.weights[li][bi].add_outer(a, du, xb);
                    match (b.source, b.timing) {
                        (BlockSource::Input, _) => {}
                        (BlockSource::Layer(j), BlockTiming::FeedForward) => {
                            // Same-step source, processed later in this sweep.
                            b.weights
                                .matvec_transpose_acc_scaled(du, &mut ws.d_o[j], a);
                        }
                        (BlockSource::Layer(j), BlockTiming::Feedback) => {
                            if through_time && k > bottom {
                                b.weights
                                    .matvec_transpose_acc_scaled(du, &mut ws.d_o_prev[j], a);
                            }
                        }
                    }
                    off += cols;
                }
            }
            if through_time && k > bottom {
                ws.d_u_next[li].copy_from_slice(du);
            } else {
                ws.d_u_next[li].iter_mut().for_each(|e| *e = 0.0);
            }
            du.iter_mut().for_each(|e| *e = 0.0);
        }
        std::mem::swap(&mut ws.d_o, &mut ws.d_o_prev);
        for v in &mut ws.d_o_prev {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
    }
}

/// Gradient-descent application with per-block rates.
pub fn apply_gradients(net: &mut Network, grads: &Gradients, rates: &BlockRates) {
    for (li, layer) in net.layers.iter_mut().enumerate() {
        for (bi, b) in layer.blocks.iter_mut().enumerate() {
            b.weights.add_scaled(-rates.weights[li][bi], &grads.weights[li][bi]);
        }
        let rate = rates.bias[li];
        for (bias, g) in layer.bias.iter_mut().zip(grads.bias[li].iter()) {
            *bias -= rate * g;
        }
    }
}

/// One critic training step: the training signal `C_t + r̂` makes the output
/// error `−r̂`; the squared error is backpropagated through the stored window.
/// No-op on an empty buffer or zero TD error.
pub fn critic_train_step(
    net: &mut Network,
    buffer: &BpttBuffer,
    td: f64,
    rates: &BlockRates,
    ws: &mut BpttWorkspace,
    grads: &mut Gradients,
) {
    if buffer.is_empty() || td == 0.0 {
        return;
    }
    accumulate_gradients(net, buffer, &[-td], true, ws, grads);
    apply_gradients(net, grads, rates);
}

/// One conventional actor training step. The training signal `A_t + r̂·ε_t`
/// makes the output error `−r̂·ε_t`; it is backpropagated through the window
/// (or only within the current step when `through_time` is unset).
pub fn conventional_actor_step(
    net: &mut Network,
    buffer: &BpttBuffer,
    noise: Option<&[f64]>,
    td: f64,
    through_time: bool,
    rates: &BlockRates,
    ws: &mut BpttWorkspace,
    grads: &mut Gradients,
) -> Result<(), Error> {
    let eps = noise.ok_or(Error::MissingNoise)?;
    if buffer.is_empty() {
        return Ok(());
    }
    let err: Vec<f64> = eps.iter().map(|e| -td * e).collect();
    if err.iter().all(|&e| e == 0.0) {
        return Ok(());
    }
    accumulate_gradients(net, buffer, &err, through_time, ws, grads);
    apply_gradients(net, grads, rates);
    Ok(())
}
