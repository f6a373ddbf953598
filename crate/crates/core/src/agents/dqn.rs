use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, check_state, AgentConfig, AgentDecision, AgentError, Experience, ModelKind,
    ModelParameters, StateVector, TrainReport, HIDDEN_WIDTH, NUM_ACTIONS, STATE_DIM,
};
use crate::nn::{Activation, AdamState, DenseNet, LayerSpec};

const HIDDEN_LAYERS: usize = 4;

pub const QNET_PARAMS: usize = STATE_DIM * HIDDEN_WIDTH
    + HIDDEN_WIDTH
    + (HIDDEN_LAYERS - 1) * (HIDDEN_WIDTH * HIDDEN_WIDTH + HIDDEN_WIDTH)
    + HIDDEN_WIDTH * NUM_ACTIONS
    + NUM_ACTIONS;

pub fn qnet_shape() -> Vec<LayerSpec> {
    let mut shape = vec![LayerSpec::new(HIDDEN_WIDTH, Activation::Relu); HIDDEN_LAYERS];
    shape.push(LayerSpec::new(NUM_ACTIONS, Activation::Identity));
    shape
}

/// Online DQN: no replay buffer, no target network, epsilon-greedy acting.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    qnet: DenseNet,
    opt: AdamState,
    gamma: f32,
    epsilon: f32,
    epsilon_decay: f32,
    epsilon_min: f32,
    explore_rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(cfg: &AgentConfig) -> Self {
        let qnet = DenseNet::new(STATE_DIM, &qnet_shape(), cfg.init_seed).expect("static shape");
        let opt = AdamState::new(&qnet, cfg.learning_rate);
        let epsilon_min = cfg.epsilon_min.clamp(0.0, 1.0);
        Self {
            qnet,
            opt,
            gamma: cfg.gamma,
            epsilon: cfg.epsilon_start.clamp(epsilon_min, 1.0),
            epsilon_decay: cfg.epsilon_decay,
            epsilon_min,
            explore_rng: ChaCha8Rng::seed_from_u64(cfg.policy_seed),
        }
    }

    pub fn qnet(&self) -> &DenseNet {
        &self.qnet
    }

    pub fn qnet_mut(&mut self) -> &mut DenseNet {
        &mut self.qnet
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    /// Overrides the exploration schedule (clamped into `[epsilon_min, 1]`).
    pub fn set_epsilon(&mut self, epsilon: f32, epsilon_min: f32) {
        self.epsilon_min = epsilon_min.clamp(0.0, 1.0);
        self.epsilon = epsilon.clamp(self.epsilon_min, 1.0);
    }

    pub fn q_values(&self, s: &StateVector) -> Result<[f32; NUM_ACTIONS], AgentError> {
        check_state(s)?;
        let out = self.qnet.predict(s)?;
        let mut q = [0.0; NUM_ACTIONS];
        q.copy_from_slice(&out);
        Ok(q)
    }

    pub fn greedy_action(&self, s: &StateVector) -> Result<u8, AgentError> {
        Ok(argmax(&self.q_values(s)?) as u8)
    }

    /// Epsilon-greedy choice; epsilon decays after every decision.
    pub fn select_action(&mut self, s: &StateVector) -> Result<AgentDecision, AgentError> {
        let q = self.q_values(s)?;
        let explore = self.explore_rng.random::<f32>() < self.epsilon;
        let action = if explore {
            self.explore_rng.random_range(0..NUM_ACTIONS)
        } else {
            argmax(&q)
        };
        self.epsilon = (self.epsilon * self.epsilon_decay).max(self.epsilon_min);
        Ok(AgentDecision {
            action: action as u8,
            action_probabilities: None,
            q_values: Some(q),
            decision_elapsed_s: 0.0,
        })
    }

    pub fn train_step(&mut self, e: &Experience) -> Result<TrainReport, AgentError> {
        e.validate()?;
        let bootstrap = if e.done {
            0.0
        } else {
            let next = self.qnet.predict(&e.next_state)?;
            self.gamma * next.iter().copied().fold(f32::NEG_INFINITY, f32::max)
        };
        let td_target = e.reward + bootstrap;
        let pass = self.qnet.forward(&e.state)?;
        let a = e.action as usize;
        let diff = pass.output()[a] - td_target;
        let mut out_grad = [0.0f32; NUM_ACTIONS];
        out_grad[a] = 2.0 * diff;
        let grads = self.qnet.backward(&pass, &out_grad)?;
        self.opt.step(&mut self.qnet, &grads)?;
        Ok(TrainReport::Dqn {
            td_target,
            loss: diff * diff,
        })
    }

    pub fn get_parameters(&self) -> ModelParameters {
        ModelParameters {
            model_kind: ModelKind::Dqn,
            version: 0,
            weights: self.qnet.flatten_params(),
        }
    }

    pub fn set_parameters(&mut self, p: &ModelParameters) -> Result<(), AgentError> {
        if p.model_kind != ModelKind::Dqn {
            return Err(AgentError::KindMismatch {
                expected: ModelKind::Dqn,
                got: p.model_kind,
            });
        }
        if p.weights.len() != QNET_PARAMS {
            return Err(AgentError::LengthMismatch {
                expected: QNET_PARAMS,
                got: p.weights.len(),
            });
        }
        self.qnet.unflatten_params(&p.weights)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: StateVector = [0.1, 0.9, 0.4, 0.3, 0.7];

    fn with_q(q: [f32; 3]) -> DqnAgent {
        let mut a = DqnAgent::new(&AgentConfig::default());
        a.set_parameters(&ModelParameters {
            model_kind: ModelKind::Dqn,
            version: 0,
            weights: vec![0.0; QNET_PARAMS],
        })
        .unwrap();
        let last = a.qnet().layers().len() - 1;
        a.qnet_mut().layer_mut(last).bias.copy_from_slice(&q);
        a.set_epsilon(0.0, 0.0);
        a
    }

    #[test]
    fn four_hidden_layers() {
        let a = DqnAgent::new(&AgentConfig::default());
        let layers = a.qnet().layers();
        assert_eq!(layers.len(), 5);
        assert!(layers[..4].iter().all(|l| l.outputs == 256 && l.activation == Activation::Relu));
        assert_eq!(a.qnet().param_count(), QNET_PARAMS);
    }

    #[test]
    fn pure_exploration_is_uniform() {
        let mut a = DqnAgent::new(&AgentConfig {
            epsilon_start: 1.0,
            epsilon_decay: 1.0,
            epsilon_min: 1.0,
            ..AgentConfig::default()
        });
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[a.select_action(&S).unwrap().action as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn greedy_argmax_and_tie_break() {
        let mut a = with_q([1.0, 3.0, 2.0]);
        assert_eq!(a.select_action(&S).unwrap().action, 1);
        let mut b = with_q([0.5, 0.5, 0.5]);
        assert_eq!(b.select_action(&S).unwrap().action, 0);
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let mut a = DqnAgent::new(&AgentConfig {
            epsilon_start: 1.0,
            epsilon_decay: 0.5,
            epsilon_min: 0.05,
            ..AgentConfig::default()
        });
        for _ in 0..20 {
            a.select_action(&S).unwrap();
            assert!(a.epsilon() >= 0.05 && a.epsilon() <= 1.0);
        }
        assert_eq!(a.epsilon(), 0.05);
    }

    #[test]
    fn zero_loss_leaves_params() {
        let mut a = with_q([0.0, -0.5, 0.0]);
        a.gamma = 0.0;
        let before = a.get_parameters();
        let e = Experience {
            device_id: 0,
            model_kind: ModelKind::Dqn,
            sequence: 0,
            state: S,
            action: 1,
            reward: -0.5,
            next_state: S,
            done: false,
        };
        let r = a.train_step(&e).unwrap();
        assert_eq!(r, TrainReport::Dqn { td_target: -0.5, loss: 0.0 });
        assert_eq!(a.get_parameters(), before);
        assert_eq!(a.optimizer().step_count, 1);
    }

    #[test]
    fn greedy_is_pure_function_of_state() {
        let mut a = DqnAgent::new(&AgentConfig::default());
        a.set_epsilon(0.0, 0.0);
        let first = a.select_action(&S).unwrap();
        for _ in 0..50 {
            assert_eq!(a.select_action(&S).unwrap(), first);
        }
    }

    #[test]
    fn kind_mismatch() {
        let mut a = DqnAgent::new(&AgentConfig::default());
        let p = ModelParameters {
            model_kind: ModelKind::Ac,
            version: 0,
            weights: vec![0.0; QNET_PARAMS],
        };
        assert!(matches!(a.set_parameters(&p), Err(AgentError::KindMismatch { .. })));
    }
}
