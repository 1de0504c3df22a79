//! Dynamic reinforcement learning for recurrent actors.
//!
//! An actor-critic learner in which exploration is not injected as output
//! noise but generated as chaotic dynamics of the actor network itself, and
//! learning steers those dynamics through each neuron's local sensitivity:
//! SAL keeps the dynamics from collapsing, SRL makes transitions with
//! positive TD error more reproducible and those with negative TD error more
//! exploratory. The conventional baseline (truncated BPTT on noise-derived
//! training signals) and two benchmark tasks — sequential navigation and
//! slider-crank control — are included, along with exploration-exponent
//! probes and a deterministic, seeded experiment runner.

pub mod agent;
pub mod config;
pub mod env;
pub mod gradcheck;
pub mod learning;
pub mod mat;
pub mod metrics;
pub mod rnn;
pub mod runner;
pub mod seed;
pub mod td;

/// Library-level error type. Non-finite variants signal a diverged run;
/// the runner records those instead of aborting the experiment.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("actor produced a non-finite output at step {step}")]
    NonFiniteOutput { step: u32 },
    #[error("critic produced a non-finite value at step {step}")]
    NonFiniteValue { step: u32 },
    #[error("conventional actor update requires the stored exploration noise")]
    MissingNoise,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
