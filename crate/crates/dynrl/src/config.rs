//! Experiment configuration: every task parameter, initialization amplitude
//! and learning rate as a named key, with the benchmark defaults wired in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{ActorLearning, Agent, AgentSettings};
use crate::env::{crank, crank::CrankConfig, nav, nav::NavConfig};
use crate::learning::{BlockRates, DynRates, LearningCondition, SensitivityTracker};
use crate::metrics::ProbeSettings;
use crate::rnn::{actor_network, critic_network, names, ActorInit, CriticInit, Network};
use crate::seed::stream_rng;
use crate::td::CriticRaiser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Navigation,
    Crank,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Navigation => "navigation",
            Task::Crank => "crank",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "navigation" | "nav" => Ok(Task::Navigation),
            "crank" | "slider-crank" => Ok(Task::Crank),
            _ => Err(format!("unknown task `{s}` (valid: navigation, crank)")),
        }
    }
}

/// Network sizes and initialization amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSettings {
    pub critic_hidden: usize,
    pub actor_lower: usize,
    pub actor_upper: usize,
    pub upper_tau: f64,
    /// Whether the upper hidden layer reads the lower layer's current-step
    /// outputs (the alternative is previous-step outputs).
    pub upper_uses_current_lower: bool,
    pub critic_spectral_radius: f64,
    pub actor_spectral_radius: f64,
    pub critic_input_amp: f64,
    pub actor_input_amp: f64,
    pub actor_inter_amp: f64,
    pub actor_output_amp: f64,
}

/// Per-block learning rates. `srl_*` feed the sensitivity rules
/// (η_SAL = sal_factor · η_SRL); `bptt_*`/`sal_*` feed the conventional
/// baseline, whose SAL rates are independent of the gradient rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSettings {
    pub critic_input: f64,
    pub critic_recurrent: f64,
    pub critic_output: f64,
    pub critic_bias: f64,
    pub srl_input: f64,
    pub srl_inter: f64,
    pub srl_self: f64,
    pub srl_output: f64,
    pub srl_bias_hidden: f64,
    pub srl_bias_output: f64,
    pub sal_factor: f64,
    pub bptt_input: f64,
    pub bptt_inter: f64,
    pub bptt_self: f64,
    pub bptt_output: f64,
    pub bptt_bias_lower: f64,
    pub bptt_bias_upper: f64,
    pub bptt_bias_output: f64,
    pub sal_input: f64,
    pub sal_inter: f64,
    pub sal_self: f64,
    pub sal_bias_lower: f64,
    pub sal_bias_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningSettings {
    pub gamma: f64,
    /// Truncation window of backpropagation through time.
    pub t_trunc: usize,
    /// Half-width of the uniform exploration noise in conventional
    /// conditions. The benchmarks are sensitive to this knob; it has no
    /// stated reference value.
    pub noise_sigma: f64,
    pub s_th: f64,
    pub sensitivity_alpha: f64,
    /// Explicit initial value for the sensitivity averages; when absent each
    /// neuron's average starts at its first observed sensitivity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbar_init: Option<f64>,
    /// Pause the sensitivity average while a neuron is on the SRL branch.
    pub freeze_sbar_during_srl: bool,
    pub eta_reg: f64,
    pub c_th: f64,
    pub eta_raise: f64,
    pub critic_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub condition: LearningCondition,
    pub phase1_episodes: u32,
    pub phase2_episodes: u32,
    pub runs: u32,
    pub master_seed: u64,
    /// Learning-curve / failure-criteria window in episodes.
    pub window: u32,
    /// Exploration-exponent probe cadence in episodes (0 disables probes).
    pub probe_every: u32,
    /// Forward-only steps at each episode start before acting begins.
    pub prep_steps: u32,
    pub learning: LearningSettings,
    pub network: NetworkSettings,
    pub rates: RateSettings,
    pub nav: NavConfig,
    pub crank: CrankConfig,
    pub probe: ProbeSettings,
}

impl ExperimentConfig {
    /// Benchmark defaults for a task/condition pair.
    pub fn defaults(task: Task, condition: LearningCondition) -> Self {
        let dynamic = condition.is_dynamic();
        let (phase, window, t_trunc, prep, probe_every) = match task {
            Task::Navigation => (20_000, 500, 20, 5, 100),
            Task::Crank => (5_000, 100, 10, 0, 0),
        };
        let network = NetworkSettings {
            critic_hidden: 50,
            actor_lower: 200,
            actor_upper: 100,
            upper_tau: 5.0,
            upper_uses_current_lower: true,
            critic_spectral_radius: 1.3,
            actor_spectral_radius: if dynamic { 3.0 } else { 1.3 },
            critic_input_amp: match task {
                Task::Navigation => 0.2,
                Task::Crank => 0.5,
            },
            actor_input_amp: match task {
                Task::Navigation => 0.2,
                Task::Crank => 0.5,
            },
            actor_inter_amp: 0.1,
            actor_output_amp: if dynamic { 0.1 } else { 0.0 },
        };
        let rates = match task {
            Task::Navigation => RateSettings {
                critic_input: 0.2,
                critic_recurrent: 0.002,
                critic_output: 0.02,
                critic_bias: 0.02,
                srl_input: 0.01,
                srl_inter: 0.005,
                srl_self: 0.005,
                srl_output: 0.01,
                srl_bias_hidden: 0.002,
                srl_bias_output: 0.002,
                sal_factor: 0.1,
                bptt_input: 0.1,
                bptt_inter: 0.01,
                bptt_self: 0.002,
                bptt_output: 0.01,
                bptt_bias_lower: 0.002,
                bptt_bias_upper: 0.001,
                bptt_bias_output: 0.001,
                sal_input: 0.01,
                sal_inter: 0.01,
                sal_self: 0.01,
                sal_bias_lower: 0.01,
                sal_bias_upper: 0.01,
            },
            Task::Crank => RateSettings {
                critic_input: 0.3,
                critic_recurrent: 0.002,
                critic_output: 0.02,
                critic_bias: 0.02,
                srl_input: 0.005,
                srl_inter: 0.002,
                srl_self: 0.002,
                srl_output: 0.005,
                srl_bias_hidden: 0.0002,
                srl_bias_output: 0.0005,
                sal_factor: 0.1,
                bptt_input: 0.2,
                bptt_inter: 0.01,
                bptt_self: 0.002,
                bptt_output: 0.01,
                bptt_bias_lower: 0.002,
                bptt_bias_upper: 0.001,
                bptt_bias_output: 0.001,
                sal_input: 0.01,
                sal_inter: 0.005,
                sal_self: 0.005,
                sal_bias_lower: 0.002,
                sal_bias_upper: 0.002,
            },
        };
        let learning = LearningSettings {
            gamma: 0.98,
            t_trunc,
            noise_sigma: 0.3,
            s_th: match task {
                Task::Navigation => 1.3,
                Task::Crank => 1.6,
            },
            sensitivity_alpha: 0.001,
            sbar_init: None,
            freeze_sbar_during_srl: false,
            eta_reg: match task {
                Task::Navigation => 1e-6,
                Task::Crank => 1e-7,
            },
            c_th: 0.1,
            eta_raise: match task {
                Task::Navigation => 0.0005,
                Task::Crank => 0.0002,
            },
            critic_beta: 0.0001,
        };
        ExperimentConfig {
            task,
            condition,
            phase1_episodes: phase,
            phase2_episodes: phase,
            runs: 40,
            master_seed: 1,
            window,
            probe_every,
            prep_steps: prep,
            learning,
            network,
            rates,
            nav: NavConfig::default(),
            crank: CrankConfig::default(),
            probe: ProbeSettings::default(),
        }
    }

    pub fn actor_io(&self) -> (usize, usize) {
        match self.task {
            Task::Navigation => (nav::INPUTS, nav::OUTPUTS),
            Task::Crank => (crank::ACTOR_INPUTS, crank::OUTPUTS),
        }
    }

    pub fn critic_inputs(&self) -> usize {
        match self.task {
            Task::Navigation => nav::INPUTS,
            Task::Crank => crank::CRITIC_INPUTS,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let l = &self.learning;
        if !(0.0 < l.gamma && l.gamma < 1.0) {
            return Err("gamma must be in (0, 1)".into());
        }
        if l.t_trunc == 0 {
            return Err("t_trunc must be at least 1".into());
        }
        if self.network.upper_tau < 1.0 {
            return Err("upper_tau must be at least 1".into());
        }
        if self.window == 0 {
            return Err("window must be positive".into());
        }
        if self.runs == 0 {
            return Err("runs must be positive".into());
        }
        for (name, v) in [
            ("noise_sigma", l.noise_sigma),
            ("s_th", l.s_th),
            ("sensitivity_alpha", l.sensitivity_alpha),
            ("eta_reg", l.eta_reg),
            ("eta_raise", l.eta_raise),
            ("critic_beta", l.critic_beta),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn build_actor(&self, run: u32) -> Network {
        let (inputs, outputs) = self.actor_io();
        let master = self.master_seed;
        let mut rng_for =
            |label: &str| stream_rng(master, run, &format!("weights/actor/{label}"));
        actor_network(
            inputs,
            self.network.actor_lower,
            self.network.actor_upper,
            outputs,
            self.network.upper_tau,
            self.network.upper_uses_current_lower,
            ActorInit {
                input_amp: self.network.actor_input_amp,
                inter_amp: self.network.actor_inter_amp,
                output_amp: self.network.actor_output_amp,
                self_feedback_radius: self.network.actor_spectral_radius,
            },
            &mut rng_for,
        )
    }

    pub fn build_critic(&self, run: u32) -> Network {
        let master = self.master_seed;
        let mut rng_for =
            |label: &str| stream_rng(master, run, &format!("weights/critic/{label}"));
        critic_network(
            self.critic_inputs(),
            self.network.critic_hidden,
            CriticInit {
                input_amp: self.network.critic_input_amp,
                recurrent_radius: self.network.critic_spectral_radius,
            },
            &mut rng_for,
        )
    }

    pub fn critic_rates(&self, critic: &Network) -> BlockRates {
        let r = &self.rates;
        BlockRates::from_named(
            critic,
            &[
                (names::IN_HID, r.critic_input),
                (names::HID_HID, r.critic_recurrent),
                (names::HID_OUT, r.critic_output),
            ],
            &[(names::HID, r.critic_bias), (names::OUT, r.critic_bias)],
        )
    }

    pub fn actor_learning(&self, actor: &Network) -> ActorLearning {
        let r = &self.rates;
        if self.condition.is_dynamic() {
            ActorLearning::Dynamic {
                rates: DynRates {
                    srl: BlockRates::from_named(
                        actor,
                        &[
                            (names::IN_HID1, r.srl_input),
                            (names::HID2_HID1, r.srl_inter),
                            (names::HID1_HID2, r.srl_inter),
                            (names::HID2_HID2, r.srl_self),
                            (names::HID1_OUT, r.srl_output),
                        ],
                        &[
                            (names::HID1, r.srl_bias_hidden),
                            (names::HID2, r.srl_bias_hidden),
                            (names::OUT, r.srl_bias_output),
                        ],
                    ),
                    sal_factor: r.sal_factor,
                },
            }
        } else {
            ActorLearning::Conventional {
                bptt: BlockRates::from_named(
                    actor,
                    &[
                        (names::IN_HID1, r.bptt_input),
                        (names::HID2_HID1, r.bptt_inter),
                        (names::HID1_HID2, r.bptt_inter),
                        (names::HID2_HID2, r.bptt_self),
                        (names::HID1_OUT, r.bptt_output),
                    ],
                    &[
                        (names::HID1, r.bptt_bias_lower),
                        (names::HID2, r.bptt_bias_upper),
                        (names::OUT, r.bptt_bias_output),
                    ],
                ),
                // SAL never touches the output layer; its entries are unused.
                sal: BlockRates::from_named(
                    actor,
                    &[
                        (names::IN_HID1, r.sal_input),
                        (names::HID2_HID1, r.sal_inter),
                        (names::HID1_HID2, r.sal_inter),
                        (names::HID2_HID2, r.sal_self),
                        (names::HID1_OUT, 0.0),
                    ],
                    &[
                        (names::HID1, r.sal_bias_lower),
                        (names::HID2, r.sal_bias_upper),
                        (names::OUT, 0.0),
                    ],
                ),
            }
        }
    }

    /// Builds a fresh agent for one run, drawing weights from the run's
    /// dedicated streams.
    pub fn build_agent(&self, run: u32) -> Agent {
        let actor = self.build_actor(run);
        let critic = self.build_critic(run);
        let tracker = SensitivityTracker::new(
            &actor,
            self.learning.sensitivity_alpha,
            self.learning.s_th,
            self.learning.sbar_init,
            self.learning.freeze_sbar_during_srl,
        );
        let raiser = CriticRaiser::new(
            self.learning.critic_beta,
            self.learning.c_th,
            self.learning.eta_raise,
        );
        let critic_rates = self.critic_rates(&critic);
        let actor_learning = self.actor_learning(&actor);
        Agent::new(
            actor,
            critic,
            tracker,
            raiser,
            AgentSettings {
                condition: self.condition,
                gamma: self.learning.gamma,
                bptt_window: self.learning.t_trunc,
                noise_sigma: self.learning.noise_sigma,
                eta_reg: self.learning.eta_reg,
                critic_rates,
                actor_learning,
            },
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_benchmark_tables() {
        let nav = ExperimentConfig::defaults(Task::Navigation, LearningCondition::A);
        assert_eq!(nav.learning.gamma, 0.98);
        assert_eq!(nav.learning.s_th, 1.3);
        assert_eq!(nav.learning.eta_reg, 1e-6);
        assert_eq!(nav.learning.c_th, 0.1);
        assert_eq!(nav.learning.eta_raise, 0.0005);
        assert_eq!(nav.learning.sensitivity_alpha, 0.001);
        assert_eq!(nav.learning.critic_beta, 0.0001);
        assert_eq!(nav.learning.t_trunc, 20);
        assert_eq!(nav.network.upper_tau, 5.0);
        assert_eq!(nav.network.actor_spectral_radius, 3.0);
        assert_eq!(nav.network.critic_spectral_radius, 1.3);
        assert_eq!(nav.network.actor_output_amp, 0.1);
        assert_eq!(nav.rates.srl_input, 0.01);
        assert_eq!(nav.rates.srl_inter, 0.005);
        assert_eq!(nav.rates.srl_bias_hidden, 0.002);
        assert_eq!(nav.rates.sal_factor, 0.1);
        assert_eq!(nav.rates.critic_input, 0.2);
        assert_eq!(nav.phase1_episodes, 20_000);
        assert_eq!(nav.window, 500);
        assert_eq!(nav.runs, 40);
        assert_eq!(nav.actor_io(), (122, 2));
        assert_eq!(nav.critic_inputs(), 122);

        let crank = ExperimentConfig::defaults(Task::Crank, LearningCondition::A);
        assert_eq!(crank.learning.s_th, 1.6);
        assert_eq!(crank.learning.eta_reg, 1e-7);
        assert_eq!(crank.learning.eta_raise, 0.0002);
        assert_eq!(crank.learning.t_trunc, 10);
        assert_eq!(crank.rates.critic_input, 0.3);
        assert_eq!(crank.rates.srl_input, 0.005);
        assert_eq!(crank.rates.srl_bias_hidden, 0.0002);
        assert_eq!(crank.rates.srl_bias_output, 0.0005);
        assert_eq!(crank.phase1_episodes, 5_000);
        assert_eq!(crank.window, 100);
        assert_eq!(crank.actor_io(), (4, 1));
        assert_eq!(crank.critic_inputs(), 2);

        let conv = ExperimentConfig::defaults(Task::Navigation, LearningCondition::B1);
        assert_eq!(conv.network.actor_spectral_radius, 1.3);
        assert_eq!(conv.network.actor_output_amp, 0.0);
        assert_eq!(conv.rates.bptt_input, 0.1);
        assert_eq!(conv.rates.sal_input, 0.01);
        assert_eq!(conv.rates.bptt_bias_upper, 0.001);
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        for condition in [LearningCondition::A, LearningCondition::B2] {
            let cfg = ExperimentConfig::defaults(Task::Crank, condition);
            let text = cfg.to_toml();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = ExperimentConfig::defaults(Task::Navigation, LearningCondition::A);
        assert!(cfg.validate().is_ok());
        cfg.learning.gamma = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_streams_make_identical_networks_per_run() {
        let cfg = ExperimentConfig::defaults(Task::Navigation, LearningCondition::A);
        let a1 = cfg.build_actor(3);
        let a2 = cfg.build_actor(3);
        assert_eq!(a1, a2);
        let other = cfg.build_actor(4);
        assert_ne!(a1, other);
    }

    #[test]
    fn paired_conditions_share_everything_but_output_and_radius() {
        // Equal seeds in a dynamic and a conventional condition share the
        // input and inter-hidden weights; the output block and the upper
        // self-feedback block differ by design.
        let dyn_cfg = ExperimentConfig::defaults(Task::Navigation, LearningCondition::A);
        let conv_cfg = ExperimentConfig::defaults(Task::Navigation, LearningCondition::B1);
        let a = dyn_cfg.build_actor(0);
        let b = conv_cfg.build_actor(0);
        assert_eq!(
            a.layers[0].blocks[0].weights, b.layers[0].blocks[0].weights,
            "input block is paired"
        );
        assert_eq!(
            a.layers[0].blocks[1].weights, b.layers[0].blocks[1].weights,
            "inter block is paired"
        );
        assert_ne!(a.layers[2].blocks[0].weights, b.layers[2].blocks[0].weights);
        assert_ne!(a.layers[1].blocks[1].weights, b.layers[1].blocks[1].weights);
    }
}
