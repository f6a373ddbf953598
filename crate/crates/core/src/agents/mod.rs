//! On-device decision makers: an actor-critic and a DQN, both choosing
//! where to run a task (0 = local, 1 = MEC, 2 = cloud) from a normalized
//! 5-feature state.

mod ac;
mod dqn;

pub use ac::{actor_shape, critic_shape, AcAgent, ACTOR_PARAMS, CRITIC_PARAMS};
pub use dqn::{qnet_shape, DqnAgent, QNET_PARAMS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;

/// Width of the observed state vector.
pub const STATE_DIM: usize = 5;
/// Number of placement actions.
pub const NUM_ACTIONS: usize = 3;
/// Hidden width shared by all three networks.
pub const HIDDEN_WIDTH: usize = 256;

pub type StateVector = [f32; STATE_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("state contains a non-finite value")]
    NonFiniteState,
    #[error("action {0} is outside {{0, 1, 2}}")]
    InvalidAction(u8),
    #[error("reward is not finite")]
    NonFiniteReward,
    #[error("parameters are for model kind {got}, agent is {expected}")]
    KindMismatch { expected: ModelKind, got: ModelKind },
    #[error("parameter vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ac,
    Dqn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Ac, ModelKind::Dqn];

    /// Token used in topic names.
    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Ac => "ac",
            ModelKind::Dqn => "dqn",
        }
    }

    /// Byte used in wire payloads.
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Ac => 0,
            ModelKind::Dqn => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Ac),
            1 => Some(ModelKind::Dqn),
            _ => None,
        }
    }

    /// Flattened parameter count of this kind's fixed architecture.
    pub fn param_count(self) -> usize {
        match self {
            ModelKind::Ac => ac::ACTOR_PARAMS + ac::CRITIC_PARAMS,
            ModelKind::Dqn => dqn::QNET_PARAMS,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ac" => Ok(ModelKind::Ac),
            "dqn" => Ok(ModelKind::Dqn),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// One transition `(s, a, r, s', done)` as streamed to a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub device_id: u32,
    pub model_kind: ModelKind,
    pub sequence: u64,
    pub state: StateVector,
    pub action: u8,
    pub reward: f32,
    pub next_state: StateVector,
    pub done: bool,
}

impl Experience {
    fn validate(&self) -> Result<(), AgentError> {
        if self.action as usize >= NUM_ACTIONS {
            return Err(AgentError::InvalidAction(self.action));
        }
        if !self.reward.is_finite() {
            return Err(AgentError::NonFiniteReward);
        }
        check_state(&self.state)?;
        check_state(&self.next_state)
    }
}

pub(crate) fn check_state(s: &StateVector) -> Result<(), AgentError> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AgentError::NonFiniteState)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDecision {
    pub action: u8,
    pub action_probabilities: Option<[f32; NUM_ACTIONS]>,
    pub q_values: Option<[f32; NUM_ACTIONS]>,
    /// Simulated seconds charged for making the decision; set by the runtime
    /// from the device profile.
    pub decision_elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainReport {
    Ac {
        td_error: f32,
        critic_loss: f32,
        actor_loss: f32,
    },
    Dqn {
        td_target: f32,
        loss: f32,
    },
}

/// Flattened weights plus metadata, as moved between client and learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub model_kind: ModelKind,
    pub version: u64,
    pub weights: Vec<f32>,
}

/// Hyper-parameters shared by both agent kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f32,
    pub gamma: f32,
    pub epsilon_start: f32,
    pub epsilon_decay: f32,
    pub epsilon_min: f32,
    /// Seeds network initialization.
    pub init_seed: u64,
    /// Seeds action sampling / exploration.
    pub policy_seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: crate::nn::AdamState::DEFAULT_LEARNING_RATE,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_decay: 0.999,
            epsilon_min: 0.05,
            init_seed: 1,
            policy_seed: 2,
        }
    }
}

/// Either agent behind one interface.
#[derive(Debug, Clone)]
pub enum Agent {
    Ac(AcAgent),
    Dqn(DqnAgent),
}

impl Agent {
    pub fn new(kind: ModelKind, cfg: &AgentConfig) -> Self {
        match kind {
            ModelKind::Ac => Agent::Ac(AcAgent::new(cfg)),
            ModelKind::Dqn => Agent::Dqn(DqnAgent::new(cfg)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Agent::Ac(_) => ModelKind::Ac,
            Agent::Dqn(_) => ModelKind::Dqn,
        }
    }

    pub fn select_action(&mut self, s: &StateVector) -> Result<AgentDecision, AgentError> {
        match self {
            Agent::Ac(a) => a.select_action(s),
            Agent::Dqn(a) => a.select_action(s),
        }
    }

    pub fn train_step(&mut self, e: &Experience) -> Result<TrainReport, AgentError> {
        match self {
            Agent::Ac(a) => a.train_step(e),
            Agent::Dqn(a) => a.train_step(e),
        }
    }

    pub fn get_parameters(&self) -> ModelParameters {
        match self {
            Agent::Ac(a) => a.get_parameters(),
            Agent::Dqn(a) => a.get_parameters(),
        }
    }

    pub fn set_parameters(&mut self, p: &ModelParameters) -> Result<(), AgentError> {
        match self {
            Agent::Ac(a) => a.set_parameters(p),
            Agent::Dqn(a) => a.set_parameters(p),
        }
    }
}

/// Lowest index wins ties.
pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
