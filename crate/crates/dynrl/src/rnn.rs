//! Recurrent network model: leaky-integrator neurons organized in layers with
//! named connection blocks.
//!
//! Each neuron integrates the inner product of its weights and inputs with a
//! first-order lag `u_t = (1 − Δt/τ)·u_{t−1} + (Δt/τ)·w·x_t` and emits
//! `o_t = tanh(u_t + θ)`. A time constant of 1 makes the neuron static
//! (`u_t = w·x_t`). Feed-forward blocks read pre-synaptic outputs of the
//! current step, feedback blocks (from the same or a later layer) read the
//! previous step's outputs.
//!
//! Two fixed topologies are provided: an Elman critic (input → recurrent
//! hidden → scalar output) and a two-timescale actor whose slow upper hidden
//! layer carries self-feedback and talks only to the fast lower hidden layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mat::{spectral_radius, Mat};

/// Integration step width Δt shared by every neuron.
pub const STEP_WIDTH: f64 = 1.0;

/// Iteration budget and stagnation tolerance for spectral-radius estimation
/// during initialization.
pub const RADIUS_MAX_ITER: usize = 20_000;
pub const RADIUS_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSource {
    /// The network's external input vector.
    Input,
    /// Output of the layer at this index.
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockTiming {
    /// Source values from the current step.
    FeedForward,
    /// Source values from the previous step.
    Feedback,
}

/// Initialization scheme for one weight block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightInit {
    /// Entries uniform in (−a, a).
    Uniform(f64),
    Zero,
    /// Standard-normal entries rescaled so the largest eigenvalue magnitude
    /// equals the given radius. Square blocks only.
    SpectralRadius(f64),
}

/// One incoming connection block of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub source: BlockSource,
    pub timing: BlockTiming,
    /// Shape `[layer size × source size]`, row per post-synaptic neuron.
    pub weights: Mat,
}

/// A layer of neurons sharing a time constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub size: usize,
    /// Time constant τ ≥ 1; τ = 1 is a static layer.
    pub tau: f64,
    pub bias: Vec<f64>,
    pub blocks: Vec<Block>,
}

impl Layer {
    /// Δt/τ, the integration gain of this layer.
    pub fn leak(&self) -> f64 {
        STEP_WIDTH / self.tau
    }

    /// Length of the concatenated input vector of one neuron.
    pub fn input_len(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.cols()).sum()
    }

    /// Euclidean norm of one neuron's full incoming weight vector
    /// (all blocks concatenated).
    pub fn neuron_weight_norm(&self, neuron: usize) -> f64 {
        let mut acc = 0.0;
        for b in &self.blocks {
            for w in b.weights.row(neuron) {
                acc += w * w;
            }
        }
        acc.sqrt()
    }
}

/// Parameters and wiring of one network. The last layer is the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_size: usize,
    /// Layers in evaluation order.
    pub layers: Vec<Layer>,
}

/// Specification of a block before weights exist.
pub struct BlockSpec {
    pub name: &'static str,
    pub source: BlockSource,
    pub timing: BlockTiming,
    pub init: WeightInit,
}

/// Specification of a layer before weights exist.
pub struct LayerSpec {
    pub name: &'static str,
    pub size: usize,
    pub tau: f64,
    pub blocks: Vec<BlockSpec>,
}

impl Network {
    /// Builds a network, drawing each block's weights from its own stream so
    /// that changing one block's scheme never shifts another block's draws.
    pub fn build(
        input_size: usize,
        specs: Vec<LayerSpec>,
        rng_for: &mut dyn FnMut(&str) -> ChaCha8Rng,
    ) -> Network {
        let sizes: Vec<usize> = specs.iter().map(|s| s.size).collect();
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(li, spec)| {
                assert!(spec.tau >= 1.0, "time constant must be at least 1");
                let blocks = spec
                    .blocks
                    .into_iter()
                    .map(|b| {
                        let cols = match b.source {
                            BlockSource::Input => input_size,
                            BlockSource::Layer(j) => {
                                if b.timing == BlockTiming::FeedForward {
                                    assert!(j < li, "feed-forward source must precede layer");
                                }
                                sizes[j]
                            }
                        };
                        let mut rng = rng_for(b.name);
                        Block {
                            name: b.name.to_string(),
                            source: b.source,
                            timing: b.timing,
                            weights: init_weights(spec.size, cols, b.init, &mut rng),
                        }
                    })
                    .collect();
                Layer {
                    name: spec.name.to_string(),
                    size: spec.size,
                    tau: spec.tau,
                    bias: vec![0.0; spec.size],
                    blocks,
                }
            })
            .collect();
        Network { input_size, layers }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.output_layer()].size
    }

    /// Advances the network by one step. Feed-forward blocks see this step's
    /// source outputs, feedback blocks see the previous step's.
    pub fn step(&self, state: &mut NetworkState, input: &[f64]) {
        assert_eq!(input.len(), self.input_size, "input dimension mismatch");
        let NetworkState { u, o, o_prev, x } = state;
        for (po, co) in o_prev.iter_mut().zip(o.iter()) {
            po.copy_from_slice(co);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let xl = &mut x[li];
            let mut off = 0;
            for b in &layer.blocks {
                let src: &[f64] = match (b.source, b.timing) {
                    (BlockSource::Input, _) => input,
                    (BlockSource::Layer(j), BlockTiming::FeedForward) => &o[j],
                    (BlockSource::Layer(j), BlockTiming::Feedback) => &o_prev[j],
                };
                xl[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
            let a = layer.leak();
            let ul = &mut u[li];
            for v in ul.iter_mut() {
                *v *= 1.0 - a;
            }
            let mut off = 0;
            for b in &layer.blocks {
                let cols = b.weights.cols();
                b.weights.matvec_acc_scaled(&xl[off..off + cols], ul, a);
                off += cols;
            }
            let ol = &mut o[li];
            for i in 0..layer.size {
                ol[i] = (ul[i] + layer.bias[i]).tanh();
            }
        }
    }

    /// Output-layer activations after the most recent step.
    pub fn output<'a>(&self, state: &'a NetworkState) -> &'a [f64] {
        &state.o[self.output_layer()]
    }
}

fn init_weights(rows: usize, cols: usize, init: WeightInit, rng: &mut ChaCha8Rng) -> Mat {
    match init {
        WeightInit::Zero => Mat::zeros(rows, cols),
        WeightInit::Uniform(a) => {
            if a == 0.0 {
                Mat::zeros(rows, cols)
            } else {
                Mat::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
            }
        }
        WeightInit::SpectralRadius(r) => {
            assert_eq!(
                rows, cols,
                "spectral-radius initialization requires a square block"
            );
            let mut m = Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
            let rho = spectral_radius(&m, RADIUS_MAX_ITER, RADIUS_TOL);
            assert!(rho > 0.0, "degenerate random matrix, spectral radius zero");
            m.scale(r / rho);
            m
        }
    }
}

/// Mutable per-step state of one network: internal states, outputs of the
/// current and previous step, and the cached per-layer input vectors used by
/// the local learning rules and by truncated backpropagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub u: Vec<Vec<f64>>,
    pub o: Vec<Vec<f64>>,
    pub o_prev: Vec<Vec<f64>>,
    /// Concatenated input vector each layer saw in the most recent step.
    pub x: Vec<Vec<f64>>,
}

impl NetworkState {
    pub fn new(net: &Network) -> Self {
        let mut s = NetworkState {
            u: net.layers.iter().map(|l| vec![0.0; l.size]).collect(),
            o: net.layers.iter().map(|l| vec![0.0; l.size]).collect(),
            o_prev: net.layers.iter().map(|l| vec![0.0; l.size]).collect(),
            x: net.layers.iter().map(|l| vec![0.0; l.input_len()]).collect(),
        };
        s.reset(net);
        s
    }

    /// Resets internal states to zero; outputs become `tanh(bias)` so feedback
    /// blocks have consistent previous-step values on the first step.
    pub fn reset(&mut self, net: &Network) {
        for (li, layer) in net.layers.iter().enumerate() {
            self.u[li].iter_mut().for_each(|v| *v = 0.0);
            for i in 0..layer.size {
                self.o[li][i] = layer.bias[i].tanh();
            }
            self.o_prev[li].copy_from_slice(&self.o[li]);
            self.x[li].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Initialization amplitudes for the actor network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActorInit {
    /// Uniform amplitude of input → lower hidden weights.
    pub input_amp: f64,
    /// Uniform amplitude of the two inter-hidden blocks.
    pub inter_amp: f64,
    /// Uniform amplitude of lower hidden → output weights.
    pub output_amp: f64,
    /// Spectral radius of the upper hidden self-feedback block.
    pub self_feedback_radius: f64,
}

/// Initialization amplitudes for the critic network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriticInit {
    pub input_amp: f64,
    /// Spectral radius of the hidden self-feedback block.
    pub recurrent_radius: f64,
}

/// Layer/block names used by the fixed topologies (stable identifiers for
/// checkpoints and per-block learning rates).
pub mod names {
    pub const HID1: &str = "hid1";
    pub const HID2: &str = "hid2";
    pub const HID: &str = "hid";
    pub const OUT: &str = "out";
    pub const IN_HID1: &str = "in_hid1";
    pub const HID2_HID1: &str = "hid2_hid1";
    pub const HID1_HID2: &str = "hid1_hid2";
    pub const HID2_HID2: &str = "hid2_hid2";
    pub const HID1_OUT: &str = "hid1_out";
    pub const IN_HID: &str = "in_hid";
    pub const HID_HID: &str = "hid_hid";
    pub const HID_OUT: &str = "hid_out";
}

/// Two-timescale actor: fast lower hidden layer (τ = 1) wired to input and
/// output, slow upper hidden layer with self-feedback and no input/output
/// connections. When `upper_uses_current_lower` is set (the default), the
/// upper layer reads the lower layer's current-step outputs; otherwise it
/// reads the previous step's.
pub fn actor_network(
    input_size: usize,
    lower: usize,
    upper: usize,
    output: usize,
    upper_tau: f64,
    upper_uses_current_lower: bool,
    init: ActorInit,
    rng_for: &mut dyn FnMut(&str) -> ChaCha8Rng,
) -> Network {
    use names::*;
    let lower_timing = if upper_uses_current_lower {
        BlockTiming::FeedForward
    } else {
        BlockTiming::Feedback
    };
    Network::build(
        input_size,
        vec![
            LayerSpec {
                name: HID1,
                size: lower,
                tau: 1.0,
                blocks: vec![
                    BlockSpec {
                        name: IN_HID1,
                        source: BlockSource::Input,
                        timing: BlockTiming::FeedForward,
                        init: WeightInit::Uniform(init.input_amp),
                    },
                    BlockSpec {
                        name: HID2_HID1,
                        source: BlockSource::Layer(1),
                        timing: BlockTiming::Feedback,
                        init: WeightInit::Uniform(init.inter_amp),
                    },
                ],
            },
            LayerSpec {
                name: HID2,
                size: upper,
                tau: upper_tau,
                blocks: vec![
                    BlockSpec {
                        name: HID1_HID2,
                        source: BlockSource::Layer(0),
                        timing: lower_timing,
                        init: WeightInit::Uniform(init.inter_amp),
                    },
                    BlockSpec {
                        name: HID2_HID2,
                        source: BlockSource::Layer(1),
                        timing: BlockTiming::Feedback,
                        init: WeightInit::SpectralRadius(init.self_feedback_radius),
                    },
                ],
            },
            LayerSpec {
                name: OUT,
                size: output,
                tau: 1.0,
                blocks: vec![BlockSpec {
                    name: HID1_OUT,
                    source: BlockSource::Layer(0),
                    timing: BlockTiming::FeedForward,
                    init: WeightInit::Uniform(init.output_amp),
                }],
            },
        ],
        rng_for,
    )
}

/// Elman critic: one recurrent hidden layer, scalar tanh output, all static.
pub fn critic_network(
    input_size: usize,
    hidden: usize,
    init: CriticInit,
    rng_for: &mut dyn FnMut(&str) -> ChaCha8Rng,
) -> Network {
    use names::*;
    Network::build(
        input_size,
        vec![
            LayerSpec {
                name: HID,
                size: hidden,
                tau: 1.0,
                blocks: vec![
                    BlockSpec {
                        name: IN_HID,
                        source: BlockSource::Input,
                        timing: BlockTiming::FeedForward,
                        init: WeightInit::Uniform(init.input_amp),
                    },
                    BlockSpec {
                        name: HID_HID,
                        source: BlockSource::Layer(0),
                        timing: BlockTiming::Feedback,
                        init: WeightInit::SpectralRadius(init.recurrent_radius),
                    },
                ],
            },
            LayerSpec {
                name: OUT,
                size: 1,
                tau: 1.0,
                blocks: vec![BlockSpec {
                    name: HID_OUT,
                    source: BlockSource::Layer(0),
                    timing: BlockTiming::FeedForward,
                    init: WeightInit::Zero,
                }],
            },
        ],
        rng_for,
    )
}
