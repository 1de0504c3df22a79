//! Finite-difference verification of every analytic gradient path:
//! the sensitivity definition, the SAL/SRL local rules, and truncated-window
//! training of both network shapes. The checks replay forward passes only,
//! so they are independent of the backward-pass implementation they verify.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::learning::{sal_update, sensitivity, srl_update};
use crate::rnn::{
    actor_network, critic_network, ActorInit, CriticInit, Network, NetworkState, STEP_WIDTH,
};
use crate::seed::stream_rng;
use crate::td::{accumulate_gradients, BpttBuffer, BpttWorkspace, Gradients, StepSnapshot};

pub const TOL_SENSITIVITY: f64 = 1e-6;
pub const TOL_LOCAL_RULE: f64 = 1e-5;
pub const TOL_SRL_SAL_IDENTITY: f64 = 1e-12;
pub const TOL_BPTT: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Analytic sensitivity vs. numeric ‖∇ₓ o‖.
    pub sensitivity_max_rel: f64,
    /// SAL update vs. numeric sensitivity gradient in (w, θ).
    pub local_rule_max_rel: f64,
    /// Largest deviation of SRL at td = −1 from SAL.
    pub srl_sal_identity_max: f64,
    /// Critic training gradients vs. finite differences.
    pub critic_bptt_max_rel: f64,
    /// Actor (two-timescale) training gradients vs. finite differences.
    pub actor_bptt_max_rel: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.sensitivity_max_rel <= TOL_SENSITIVITY
            && self.local_rule_max_rel <= TOL_LOCAL_RULE
            && self.srl_sal_identity_max <= TOL_SRL_SAL_IDENTITY
            && self.critic_bptt_max_rel <= TOL_BPTT
            && self.actor_bptt_max_rel <= TOL_BPTT
    }
}

/// Runs the full verification suite with the given number of random samples
/// for the per-neuron checks.
pub fn run(seed: u64, samples: usize) -> GradCheckReport {
    GradCheckReport {
        sensitivity_max_rel: check_sensitivity(seed, samples),
        local_rule_max_rel: check_local_rule(seed ^ 1, samples),
        srl_sal_identity_max: check_srl_sal_identity(seed ^ 2, samples),
        critic_bptt_max_rel: check_critic_bptt(seed ^ 3),
        actor_bptt_max_rel: check_actor_bptt(seed ^ 4),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0, "gradcheck")
}

fn sample_neuron(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let m = r.random_range(2..8);
    let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..m).map(|_| r.random_range(-1.2..1.2)).collect();
    let theta: f64 = r.random_range(-0.5..0.5);
    (x, w, theta)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Analytic sensitivity vs. central-difference ‖∇ₓ o‖.
pub fn check_sensitivity(seed: u64, samples: usize) -> f64 {
    let mut r = rng(seed);
    let mut max_rel: f64 = 0.0;
    let h = 1e-6;
    let mut done = 0;
    while done < samples {
        let (x, w, theta) = sample_neuron(&mut r);
        if crate::mat::norm(&w) < 0.05 {
            continue;
        }
        let u = dot(&w, &x) + theta;
        let s = sensitivity(u, &w);
        let mut grad_sq = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let op = (dot(&w, &xp) + theta).tanh();
            let om = (dot(&w, &xm) + theta).tanh();
            let g = (op - om) / (2.0 * h);
            grad_sq += g * g;
        }
        let fd = grad_sq.sqrt();
        max_rel = max_rel.max((s - fd).abs() / fd.max(1e-9));
        done += 1;
    }
    max_rel
}

/// SAL update (divided by its rate) vs. central-difference gradient of the
/// sensitivity in (w, θ), per sample as a whole-vector relative error.
pub fn check_local_rule(seed: u64, samples: usize) -> f64 {
    let mut r = rng(seed);
    let mut max_rel: f64 = 0.0;
    let h = 1e-6;
    let mut done = 0;
    while done < samples {
        let (x, w, theta) = sample_neuron(&mut r);
        if crate::mat::norm(&w) < 0.1 {
            continue;
        }
        let tau = if r.random_range(0..2) == 0 { 1.0 } else { 5.0 };
        let o = (dot(&w, &x) + theta).tanh();
        let (dw, dth) = sal_update(&x, &w, o, tau, 1.0);
        let scale = STEP_WIDTH / tau;

        let s_of = |w: &[f64], theta: f64| sensitivity(dot(w, &x) + theta, w);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let g = scale * (s_of(&wp, theta) - s_of(&wm, theta)) / (2.0 * h);
            num += (dw[i] - g) * (dw[i] - g);
            den += g * g;
        }
        let gt = scale * (s_of(&w, theta + h) - s_of(&w, theta - h)) / (2.0 * h);
        num += (dth - gt) * (dth - gt);
        den += gt * gt;
        max_rel = max_rel.max(num.sqrt() / den.sqrt().max(1e-9));
        done += 1;
    }
    max_rel
}

/// SRL at td = −1 must reproduce SAL with the same rate.
pub fn check_srl_sal_identity(seed: u64, samples: usize) -> f64 {
    let mut r = rng(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..samples {
        let (x, w, theta) = sample_neuron(&mut r);
        let tau = if r.random_range(0..2) == 0 { 1.0 } else { 5.0 };
        let o = (dot(&w, &x) + theta).tanh();
        let eta = 0.01;
        let (dw_a, dth_a) = sal_update(&x, &w, o, tau, eta);
        let (dw_b, dth_b) = srl_update(&x, &w, o, tau, eta, -1.0);
        for (a, b) in dw_a.iter().zip(dw_b.iter()) {
            max_dev = max_dev.max((a - b).abs());
        }
        max_dev = max_dev.max((dth_a - dth_b).abs());
    }
    max_dev
}

// ---------------------------------------------------------------------------
// Truncated-window gradient checks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum ParamRef {
    Weight(usize, usize, usize, usize),
    Bias(usize, usize),
}

fn all_params(net: &Network) -> Vec<ParamRef> {
    let mut v = Vec::new();
    for (li, layer) in net.layers.iter().enumerate() {
        for (bi, b) in layer.blocks.iter().enumerate() {
            for r in 0..b.weights.rows() {
                for c in 0..b.weights.cols() {
                    v.push(ParamRef::Weight(li, bi, r, c));
                }
            }
        }
        for i in 0..layer.size {
            v.push(ParamRef::Bias(li, i));
        }
    }
    v
}

fn nudge(net: &mut Network, p: ParamRef, h: f64) {
    match p {
        ParamRef::Weight(li, bi, r, c) => {
            let w = &mut net.layers[li].blocks[bi].weights;
            let v = w.get(r, c);
            w.set(r, c, v + h);
        }
        ParamRef::Bias(li, i) => net.layers[li].bias[i] += h,
    }
}

fn grad_of(grads: &Gradients, p: ParamRef) -> f64 {
    match p {
        ParamRef::Weight(li, bi, r, c) => grads.weights[li][bi].get(r, c),
        ParamRef::Bias(li, i) => grads.bias[li][i],
    }
}

/// Squared-error loss of the window's final output against a fixed target,
/// replayed from the stored pre-window state.
fn window_loss(net: &Network, pre: &NetworkState, inputs: &[Vec<f64>], target: &[f64]) -> f64 {
    let mut st = pre.clone();
    for inp in inputs {
        net.step(&mut st, inp);
    }
    net.output(&st)
        .iter()
        .zip(target)
        .map(|(o, t)| 0.5 * (o - t) * (o - t))
        .sum()
}

/// Compares analytic window gradients against central finite differences for
/// windows of several lengths ending at the same step. Returns the largest
/// relative error seen.
fn check_windows(net: &Network, seed: u64, total_steps: usize, windows: &[usize]) -> f64 {
    let mut r = rng(seed);
    let inputs: Vec<Vec<f64>> = (0..total_steps)
        .map(|_| (0..net.input_size).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let target: Vec<f64> = (0..net.output_size())
        .map(|_| r.random_range(-0.8..0.8))
        .collect();

    // Forward pass recording the state before each step.
    let mut states = Vec::with_capacity(total_steps);
    let mut st = NetworkState::new(net);
    for inp in &inputs {
        states.push(st.clone());
        net.step(&mut st, inp);
    }
    let final_out = net.output(&st).to_vec();
    let err: Vec<f64> = final_out.iter().zip(&target).map(|(o, t)| o - t).collect();

    let mut ws = BpttWorkspace::new(net);
    let mut grads = Gradients::zeros(net);
    let mut max_rel: f64 = 0.0;
    for &w in windows {
        assert!(w >= 1 && w <= total_steps);
        let start = total_steps - w;
        let mut buffer = BpttBuffer::new(w);
        let mut replay = states[start].clone();
        for inp in &inputs[start..] {
            net.step(&mut replay, inp);
            buffer.push(StepSnapshot::capture(&replay));
        }
        accumulate_gradients(net, &buffer, &err, true, &mut ws, &mut grads);

        let params = all_params(net);
        let h = 1e-5;
        let mut fd = Vec::with_capacity(params.len());
        for &p in &params {
            let mut plus = net.clone();
            nudge(&mut plus, p, h);
            let mut minus = net.clone();
            nudge(&mut minus, p, -h);
            let lp = window_loss(&plus, &states[start], &inputs[start..], &target);
            let lm = window_loss(&minus, &states[start], &inputs[start..], &target);
            fd.push((lp - lm) / (2.0 * h));
        }
        let fd_scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for (&p, &g_fd) in params.iter().zip(fd.iter()) {
            let g = grad_of(&grads, p);
            let denom = g_fd.abs().max(1e-6 * fd_scale).max(1e-12);
            max_rel = max_rel.max((g - g_fd).abs() / denom);
        }
    }
    max_rel
}

/// 2-3-1 recurrent critic, checked at windows 1, 3 and the full episode.
pub fn check_critic_bptt(seed: u64) -> f64 {
    let mut rng_for = |label: &str| stream_rng(seed, 0, label);
    let net = critic_network(
        2,
        3,
        CriticInit {
            input_amp: 0.7,
            recurrent_radius: 0.9,
        },
        &mut rng_for,
    );
    check_windows(&net, seed ^ 0x11, 8, &[1, 3, 8])
}

/// Tiny two-timescale actor (3-[4-3]-2, slow upper layer), same windows.
pub fn check_actor_bptt(seed: u64) -> f64 {
    let mut rng_for = |label: &str| stream_rng(seed, 0, label);
    let mut net = actor_network(
        3,
        4,
        3,
        2,
        5.0,
        true,
        ActorInit {
            input_amp: 0.6,
            inter_amp: 0.5,
            output_amp: 0.5,
            self_feedback_radius: 1.2,
        },
        &mut rng_for,
    );
    // Non-zero biases exercise the bias gradients properly.
    let mut r = rng(seed ^ 0x22);
    for layer in &mut net.layers {
        for b in layer.bias.iter_mut() {
            *b = r.random_range(-0.3..0.3);
        }
    }
    check_windows(&net, seed ^ 0x33, 8, &[1, 3, 8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run(12, 300);
        assert!(
            report.pass(),
            "gradient verification failed: {report:?}"
        );
    }

    #[test]
    fn window_check_catches_a_broken_gradient() {
        // Sanity check of the harness itself: a corrupted analytic gradient
        // must be flagged. Corrupt by comparing against a different window.
        let mut rng_for = |label: &str| stream_rng(5, 0, label);
        let net = critic_network(
            2,
            3,
            CriticInit {
                input_amp: 0.7,
                recurrent_radius: 0.9,
            },
            &mut rng_for,
        );
        let mut r = rng(6);
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let target = vec![0.3];
        let mut st = NetworkState::new(&net);
        let mut states = Vec::new();
        let mut buffer = BpttBuffer::new(6);
        for inp in &inputs {
            states.push(st.clone());
            net.step(&mut st, inp);
            buffer.push(StepSnapshot::capture(&st));
        }
        let err = vec![net.output(&st)[0] - target[0]];
        let mut ws = BpttWorkspace::new(&net);
        let mut g_full = Gradients::zeros(&net);
        accumulate_gradients(&net, &buffer, &err, true, &mut ws, &mut g_full);
        let mut g_bp = Gradients::zeros(&net);
        accumulate_gradients(&net, &buffer, &err, false, &mut ws, &mut g_bp);
        // The recurrent block's gradient must differ between the two.
        let full = g_full.weights[0][1].data();
        let bp = g_bp.weights[0][1].data();
        assert!(
            full.iter()
                .zip(bp)
                .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
        );
    }
}
