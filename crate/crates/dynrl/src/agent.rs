//! Online actor-critic training loop shared by all learning conditions.
//!
//! Per acting step, in order: the critic is evaluated on the current
//! observation (updating the raising average), the now-computable TD error of
//! the previous transition triggers that step's deferred updates, the actor
//! is evaluated, motor commands (plus exploration noise under conventional
//! conditions) drive the environment, and the new transition becomes the
//! pending one. Updates for a step are therefore always applied one step
//! late, using that step's cached activations, which the actor still holds
//! because it has not been stepped again in between.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, StepOutcome};
use crate::learning::{
    conventional_sal_step, dynamic_rl_step, observe_sensitivities, regularize_output_weights,
    BlockRates, DynRates, LearningCondition, SensitivityTracker,
};
use crate::rnn::{Network, NetworkState};
use crate::td::{
    conventional_actor_step, critic_train_step, BpttBuffer, BpttWorkspace, CriticRaiser,
    Gradients, StepSnapshot, TdContext,
};
use crate::Error;

/// How the actor is trained; the critic is always trained through time.
#[derive(Debug, Clone)]
pub enum ActorLearning {
    Dynamic { rates: DynRates },
    Conventional { bptt: BlockRates, sal: BlockRates },
}

#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub condition: LearningCondition,
    pub gamma: f64,
    pub bptt_window: usize,
    /// Half-width of the uniform exploration noise (conventional only).
    pub noise_sigma: f64,
    pub eta_reg: f64,
    pub critic_rates: BlockRates,
    pub actor_learning: ActorLearning,
}

struct Pending {
    value: f64,
    reward: f64,
    noise: Option<Vec<f64>>,
}

/// One learning agent: actor and critic networks plus every piece of
/// persistent learner state (sensitivity averages, critic average, truncation
/// buffers). Instances are independent and can run on separate threads.
pub struct Agent {
    pub condition: LearningCondition,
    pub actor: Network,
    pub critic: Network,
    pub actor_state: NetworkState,
    pub critic_state: NetworkState,
    pub tracker: SensitivityTracker,
    pub raiser: CriticRaiser,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub eta_reg: f64,
    critic_rates: BlockRates,
    actor_learning: ActorLearning,
    critic_buf: BpttBuffer,
    actor_buf: BpttBuffer,
    critic_ws: BpttWorkspace,
    critic_grads: Gradients,
    actor_ws: BpttWorkspace,
    actor_grads: Gradients,
    w_norms: Vec<Vec<f64>>,
    sal_branch: Vec<Vec<bool>>,
    pending: Option<Pending>,
    episode_step: u32,
}

impl Agent {
    pub fn new(
        actor: Network,
        critic: Network,
        tracker: SensitivityTracker,
        raiser: CriticRaiser,
        settings: AgentSettings,
    ) -> Self {
        let actor_state = NetworkState::new(&actor);
        let critic_state = NetworkState::new(&critic);
        let w_norms = actor.layers.iter().map(|l| vec![0.0; l.size]).collect();
        let sal_branch = actor.layers.iter().map(|l| vec![false; l.size]).collect();
        Agent {
            condition: settings.condition,
            critic_buf: BpttBuffer::new(settings.bptt_window),
            actor_buf: BpttBuffer::new(settings.bptt_window),
            critic_ws: BpttWorkspace::new(&critic),
            critic_grads: Gradients::zeros(&critic),
            actor_ws: BpttWorkspace::new(&actor),
            actor_grads: Gradients::zeros(&actor),
            gamma: settings.gamma,
            noise_sigma: settings.noise_sigma,
            eta_reg: settings.eta_reg,
            critic_rates: settings.critic_rates,
            actor_learning: settings.actor_learning,
            tracker,
            raiser,
            actor_state,
            critic_state,
            actor,
            critic,
            w_norms,
            sal_branch,
            pending: None,
            episode_step: 0,
        }
    }

    fn conventional(&self) -> bool {
        !self.condition.is_dynamic()
    }

    /// Resets both networks' internal states and the truncation buffers.
    /// Sensitivity and critic averages persist across episodes.
    pub fn begin_episode(&mut self) {
        self.actor_state.reset(&self.actor);
        self.critic_state.reset(&self.critic);
        self.critic_buf.clear();
        self.actor_buf.clear();
        self.pending = None;
        self.episode_step = 0;
    }

    /// One preparation step: both networks advance on the current observation
    /// without acting or updating any parameters; the across-episode averages
    /// still observe the activity.
    pub fn prep_step(&mut self, env: &dyn Environment) {
        self.critic.step(&mut self.critic_state, &env.critic_input());
        self.raiser.observe(self.critic.output(&self.critic_state)[0]);
        self.critic_buf.push(StepSnapshot::capture(&self.critic_state));
        self.actor.step(&mut self.actor_state, &env.actor_input());
        observe_sensitivities(
            &self.actor,
            &self.actor_state,
            &mut self.tracker,
            &mut self.w_norms,
            &mut self.sal_branch,
        );
        if self.conventional() {
            self.actor_buf.push(StepSnapshot::capture(&self.actor_state));
        }
    }

    /// One acting step with learning enabled.
    pub fn learn_step(
        &mut self,
        env: &mut dyn Environment,
        noise_rng: &mut ChaCha8Rng,
    ) -> Result<StepOutcome, Error> {
        self.episode_step += 1;
        let step = self.episode_step;

        self.critic.step(&mut self.critic_state, &env.critic_input());
        let value = self.critic.output(&self.critic_state)[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { step });
        }
        self.raiser.observe(value);
        let raise = self.raiser.raise_amount();
        if raise > 0.0 {
            let out = self.critic.output_layer();
            self.critic.layers[out].bias[0] += raise;
        }

        // The previous step's TD error is now available; its updates use the
        // actor caches of that step, which are still in place.
        if let Some(p) = self.pending.take() {
            let td = TdContext {
                gamma: self.gamma,
                reward: p.reward,
                value: p.value,
                next_value: value,
                terminal: false,
            }
            .error();
            self.apply_updates(td, p.noise.as_deref())?;
        }
        self.critic_buf.push(StepSnapshot::capture(&self.critic_state));

        self.actor.step(&mut self.actor_state, &env.actor_input());
        observe_sensitivities(
            &self.actor,
            &self.actor_state,
            &mut self.tracker,
            &mut self.w_norms,
            &mut self.sal_branch,
        );
        let actor_out = self.actor.output(&self.actor_state).to_vec();

        let (motor, noise) = if self.conventional() {
            let eps: Vec<f64> = if self.noise_sigma > 0.0 {
                actor_out
                    .iter()
                    .map(|_| noise_rng.random_range(-self.noise_sigma..self.noise_sigma))
                    .collect()
            } else {
                vec![0.0; actor_out.len()]
            };
            let motor: Vec<f64> = actor_out.iter().zip(&eps).map(|(a, e)| a + e).collect();
            (motor, Some(eps))
        } else {
            (actor_out, None)
        };

        let outcome = env.act(&motor)?;
        if self.conventional() {
            self.actor_buf.push(StepSnapshot::capture(&self.actor_state));
        }
        self.pending = Some(Pending {
            value,
            reward: outcome.reward,
            noise,
        });

        if outcome.done {
            let p = self.pending.take().expect("pending was just stored");
            let next_value = if outcome.td_terminal {
                0.0
            } else {
                // Bootstrap from the post-transition observation; the extra
                // forward pass never enters the truncation window.
                self.critic.step(&mut self.critic_state, &env.critic_input());
                self.critic.output(&self.critic_state)[0]
            };
            if !next_value.is_finite() {
                return Err(Error::NonFiniteValue { step });
            }
            let td = TdContext {
                gamma: self.gamma,
                reward: p.reward,
                value: p.value,
                next_value,
                terminal: outcome.td_terminal,
            }
            .error();
            self.apply_updates(td, p.noise.as_deref())?;
        }
        Ok(outcome)
    }

    fn apply_updates(&mut self, td: f64, noise: Option<&[f64]>) -> Result<(), Error> {
        critic_train_step(
            &mut self.critic,
            &self.critic_buf,
            td,
            &self.critic_rates,
            &mut self.critic_ws,
            &mut self.critic_grads,
        );
        match &self.actor_learning {
            ActorLearning::Dynamic { rates } => {
                dynamic_rl_step(
                    &mut self.actor,
                    &self.actor_state,
                    &self.w_norms,
                    &self.sal_branch,
                    td,
                    self.condition,
                    rates,
                );
            }
            ActorLearning::Conventional { bptt, sal } => {
                if self.condition.conventional_sal() {
                    conventional_sal_step(
                        &mut self.actor,
                        &self.actor_state,
                        &self.w_norms,
                        &self.sal_branch,
                        sal,
                    );
                }
                conventional_actor_step(
                    &mut self.actor,
                    &self.actor_buf,
                    noise,
                    td,
                    self.condition.through_time(),
                    bptt,
                    &mut self.actor_ws,
                    &mut self.actor_grads,
                )?;
            }
        }
        regularize_output_weights(&mut self.actor, self.eta_reg);
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn pending_noise(&self) -> Option<&[f64]> {
        self.pending.as_ref().and_then(|p| p.noise.as_deref())
    }
}

/// One acting step with learning, noise and the critic disabled — used for
/// test episodes and exploration-exponent probes.
pub fn eval_step(
    actor: &Network,
    state: &mut NetworkState,
    env: &mut dyn Environment,
) -> Result<StepOutcome, Error> {
    let input = env.actor_input();
    actor.step(state, &input);
    let out = actor.output(state).to_vec();
    env.act(&out)
}
