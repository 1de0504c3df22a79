//! Benchmark environments: a walled-field sequential navigation task and a
//! slider-crank rotor control task.

pub mod crank;
pub mod nav;

use crate::Error;

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Reinforcement signal received on the transition.
    pub reward: f64,
    /// Whether the episode is over after this transition.
    pub done: bool,
    /// Whether the transition is terminal in the TD sense (next value = 0).
    pub td_terminal: bool,
}

/// Common surface the training loop needs from a task.
pub trait Environment {
    /// Sensor vector fed to the actor network.
    fn actor_input(&self) -> Vec<f64>;
    /// Sensor vector fed to the critic network.
    fn critic_input(&self) -> Vec<f64>;
    /// Applies the actor's motor commands and advances one step.
    fn act(&mut self, actor_output: &[f64]) -> Result<StepOutcome, Error>;
}
