use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_state, AgentConfig, AgentDecision, AgentError, Experience, ModelKind, ModelParameters,
    StateVector, TrainReport, HIDDEN_WIDTH, NUM_ACTIONS, STATE_DIM,
};
use crate::nn::{Activation, AdamState, DenseNet, LayerSpec};

pub const ACTOR_PARAMS: usize =
    STATE_DIM * HIDDEN_WIDTH + HIDDEN_WIDTH + HIDDEN_WIDTH * HIDDEN_WIDTH + HIDDEN_WIDTH + HIDDEN_WIDTH * NUM_ACTIONS + NUM_ACTIONS;
pub const CRITIC_PARAMS: usize =
    STATE_DIM * HIDDEN_WIDTH + HIDDEN_WIDTH + HIDDEN_WIDTH * HIDDEN_WIDTH + HIDDEN_WIDTH + HIDDEN_WIDTH + 1;

const CRITIC_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn actor_shape() -> [LayerSpec; 3] {
    [
        LayerSpec::new(HIDDEN_WIDTH, Activation::Tanh),
        LayerSpec::new(HIDDEN_WIDTH, Activation::Tanh),
        LayerSpec::new(NUM_ACTIONS, Activation::Softmax),
    ]
}

pub fn critic_shape() -> [LayerSpec; 3] {
    [
        LayerSpec::new(HIDDEN_WIDTH, Activation::Tanh),
        LayerSpec::new(HIDDEN_WIDTH, Activation::Tanh),
        LayerSpec::new(1, Activation::Identity),
    ]
}

/// Actor-critic trained online with the one-step TD error as advantage.
#[derive(Debug, Clone)]
pub struct AcAgent {
    actor: DenseNet,
    critic: DenseNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    gamma: f32,
    policy_rng: ChaCha8Rng,
}

impl AcAgent {
    pub fn new(cfg: &AgentConfig) -> Self {
        let actor = DenseNet::new(STATE_DIM, &actor_shape(), cfg.init_seed).expect("static shape");
        let critic = DenseNet::new(
            STATE_DIM,
            &critic_shape(),
            cfg.init_seed.wrapping_add(CRITIC_SEED_OFFSET),
        )
        .expect("static shape");
        let actor_opt = AdamState::new(&actor, cfg.learning_rate);
        let critic_opt = AdamState::new(&critic, cfg.learning_rate);
        Self {
            actor,
            critic,
            actor_opt,
            critic_opt,
            gamma: cfg.gamma,
            policy_rng: ChaCha8Rng::seed_from_u64(cfg.policy_seed),
        }
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    pub fn actor_opt(&self) -> &AdamState {
        &self.actor_opt
    }

    pub fn critic_opt(&self) -> &AdamState {
        &self.critic_opt
    }

    pub fn probabilities(&self, s: &StateVector) -> Result<[f32; NUM_ACTIONS], AgentError> {
        check_state(s)?;
        let out = self.actor.predict(s)?;
        let mut p = [0.0; NUM_ACTIONS];
        p.copy_from_slice(&out);
        Ok(p)
    }

    pub fn value(&self, s: &StateVector) -> Result<f32, AgentError> {
        check_state(s)?;
        Ok(self.critic.predict(s)?[0])
    }

    /// Samples an action from the actor's distribution.
    pub fn select_action(&mut self, s: &StateVector) -> Result<AgentDecision, AgentError> {
        let probs = self.probabilities(s)?;
        let u: f32 = self.policy_rng.random();
        let mut acc = 0.0;
        let mut action = NUM_ACTIONS - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                action = i;
                break;
            }
        }
        Ok(AgentDecision {
            action: action as u8,
            action_probabilities: Some(probs),
            q_values: None,
            decision_elapsed_s: 0.0,
        })
    }

    /// One online update of critic then actor from a single transition.
    pub fn train_step(&mut self, e: &Experience) -> Result<TrainReport, AgentError> {
        e.validate()?;
        let critic_pass = self.critic.forward(&e.state)?;
        let v = critic_pass.output()[0];
        let v_next = if e.done { 0.0 } else { self.critic.predict(&e.next_state)?[0] };
        let td_error = e.reward + self.gamma * v_next - v;

        let actor_pass = self.actor.forward(&e.state)?;
        let a = e.action as usize;
        let p_a = actor_pass.output()[a].max(f32::MIN_POSITIVE);

        let critic_grads = self.critic.backward(&critic_pass, &[-2.0 * td_error])?;
        let mut actor_out_grad = [0.0f32; NUM_ACTIONS];
        actor_out_grad[a] = -td_error / p_a;
        let actor_grads = self.actor.backward(&actor_pass, &actor_out_grad)?;

        self.critic_opt.step(&mut self.critic, &critic_grads)?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        Ok(TrainReport::Ac {
            td_error,
            critic_loss: td_error * td_error,
            actor_loss: -td_error * p_a.ln(),
        })
    }

    /// Actor parameters followed by critic parameters.
    pub fn get_parameters(&self) -> ModelParameters {
        let mut weights = self.actor.flatten_params();
        weights.extend(self.critic.flatten_params());
        ModelParameters {
            model_kind: ModelKind::Ac,
            version: 0,
            weights,
        }
    }

    pub fn set_parameters(&mut self, p: &ModelParameters) -> Result<(), AgentError> {
        if p.model_kind != ModelKind::Ac {
            return Err(AgentError::KindMismatch {
                expected: ModelKind::Ac,
                got: p.model_kind,
            });
        }
        if p.weights.len() != ACTOR_PARAMS + CRITIC_PARAMS {
            return Err(AgentError::LengthMismatch {
                expected: ACTOR_PARAMS + CRITIC_PARAMS,
                got: p.weights.len(),
            });
        }
        let (actor, critic) = p.weights.split_at(ACTOR_PARAMS);
        self.actor.unflatten_params(actor)?;
        self.critic.unflatten_params(critic)?;
        Ok(())
    }
}
