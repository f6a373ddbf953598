//! Distributed-training plane: broker, server learners, upload receiver and
//! the device-side runtime loop.

pub mod broker;
pub mod client;
pub mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentConfig, AgentError, ModelKind};
use crate::env::EnvError;
use crate::netem::NetemConfig;
use crate::wire::{WireError, DEFAULT_CHUNK_SIZE};

pub use broker::{Broker, Delivery, FrameBytes, SubscriptionId};
pub use client::{ClientRuntime, ClientStep, TrainingMode, WireCounters};
pub use server::{
    ChunkOutcome, LearnerKey, LearnerStats, ModelReceiver, RouteLedger, ServerLearner, ServerManager, UploadStatus,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("experience for {experience:?} routed to learner {learner:?}")]
    Misrouted {
        learner: (u32, ModelKind),
        experience: (u32, ModelKind),
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("remote training needs a server plane")]
    NoServer,
    #[error("model upload incomplete: {acked} of {total} chunks acknowledged")]
    UploadFailed { acked: usize, total: usize },
}

/// How the client sizes its experience/weights transfers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkBandwidth {
    /// Transfers take no serialization time.
    Unlimited,
    /// Uses the throughput observed in the current state.
    Observed,
    Fixed { mbps: f64 },
}

/// Client to server link and server-side settings for remote training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub bandwidth: LinkBandwidth,
    /// Simulated time for one server training step.
    pub server_step_ms: f64,
    /// Delay and loss on each leg of the experience/weights round trip.
    pub link: NetemConfig,
    pub chunk_size: usize,
    pub upload_timeout_s: f64,
    pub max_concurrent_learners: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            bandwidth: LinkBandwidth::Observed,
            server_step_ms: 2.0,
            link: NetemConfig {
                base_latency_ms: 5.0,
                jitter_ms: 1.0,
                seed: 103,
                ..NetemConfig::default()
            },
            chunk_size: DEFAULT_CHUNK_SIZE,
            upload_timeout_s: 30.0,
            max_concurrent_learners: 1,
        }
    }
}

impl RemoteConfig {
    /// A link with no delay, no loss and no server compute time.
    pub fn zero_latency() -> Self {
        Self {
            bandwidth: LinkBandwidth::Unlimited,
            server_step_ms: 0.0,
            link: NetemConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.link.validate().map_err(|e| format!("remote.link: {e}"))?;
        if let LinkBandwidth::Fixed { mbps } = self.bandwidth {
            if !(mbps > 0.0 && mbps.is_finite()) {
                return Err("remote.bandwidth.mbps must be positive".into());
            }
        }
        if !(self.server_step_ms >= 0.0 && self.server_step_ms.is_finite()) {
            return Err("remote.server_step_ms must be >= 0".into());
        }
        if self.chunk_size == 0 {
            return Err("remote.chunk_size must be positive".into());
        }
        if !(self.upload_timeout_s > 0.0) {
            return Err("remote.upload_timeout_s must be positive".into());
        }
        if self.max_concurrent_learners == 0 {
            return Err("remote.max_concurrent_learners must be >= 1".into());
        }
        Ok(())
    }
}

/// Broker plus server manager, wired together.
#[derive(Debug)]
pub struct ServerPlane {
    pub broker: Broker,
    pub manager: ServerManager,
    server_sub: SubscriptionId,
}

impl ServerPlane {
    pub fn new(agent_cfg: AgentConfig, remote: &RemoteConfig) -> Self {
        let mut broker = Broker::new();
        let server_sub = broker.subscribe(server::SERVER_FILTER);
        Self {
            broker,
            manager: ServerManager::new(agent_cfg, remote.upload_timeout_s, remote.max_concurrent_learners),
            server_sub,
        }
    }

    /// Lets the server handle everything published so far.
    pub fn pump(&mut self, now_s: f64) -> usize {
        self.manager.pump(&mut self.broker, self.server_sub, now_s)
    }
}
