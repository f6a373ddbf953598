//! Device-side decision/learning loop.
//!
//! Each step: apply any weights that have arrived, observe, decide, execute,
//! then either train in place (local mode) or publish the experience and
//! move on (remote mode). Remote weights come back through a simulated link
//! and sit in a mailbox until their arrival time has passed.
//!
//! The learning loop is anchored at decision instants: an experience is
//! published at its task's arrival time, and its weights mature `rtt` later.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfig, AgentDecision, Experience, ModelKind, StateVector};
use crate::env::{transfer_ms, ObservedState, OffloadEnv, StepOutcome};
use crate::learner::{LearnerError, LinkBandwidth, RemoteConfig, ServerPlane, SubscriptionId};
use crate::netem::NetemLink;
use crate::taskgen::TaskSpec;
use crate::wire::{
    chunk_model, decode_frame, encode_frame, encode_model_blob, Frame, Message, TopicAddress, WeightsPayload,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Local,
    Remote,
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingMode::Local => "local",
            TrainingMode::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireCounters {
    pub experience_frames: u64,
    pub experience_bytes: u64,
    /// Experiences the uplink lost before they reached the broker.
    pub experiences_lost: u64,
    pub weights_frames: u64,
    pub weights_bytes: u64,
    pub weights_lost: u64,
    pub upload_frames: u64,
    pub upload_bytes: u64,
    pub acks_received: u64,
}

#[derive(Debug, Clone)]
struct PendingWeights {
    ready_at_s: f64,
    payload: WeightsPayload,
}

/// Everything that happened in one client step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStep {
    pub state_vector: StateVector,
    pub decision: AgentDecision,
    pub outcome: StepOutcome,
    /// Decisions made on the current weights, including this one.
    pub staleness: u64,
    /// Version of the weights this decision used.
    pub weight_version: u64,
    pub train_time_ms: f64,
    pub train_energy_j: f64,
    /// Environment latency plus the training or publishing charge.
    pub total_latency_ms: f64,
    pub total_energy_j: f64,
}

#[derive(Debug, Clone)]
pub struct ClientRuntime {
    device_id: u32,
    mode: TrainingMode,
    agent: Agent,
    remote: RemoteConfig,
    link: NetemLink,
    mailbox: Vec<PendingWeights>,
    staleness: u64,
    sequence: u64,
    weight_version: u64,
    transfers: u64,
    weights_sub: Option<SubscriptionId>,
    counters: WireCounters,
}

impl ClientRuntime {
    pub fn new(
        device_id: u32,
        kind: ModelKind,
        mode: TrainingMode,
        agent_cfg: &AgentConfig,
        remote: &RemoteConfig,
    ) -> Result<Self, String> {
        remote.validate()?;
        Ok(Self {
            device_id,
            mode,
            agent: Agent::new(kind, agent_cfg),
            remote: remote.clone(),
            link: NetemLink::new(remote.link.clone()).map_err(|e| e.to_string())?,
            mailbox: Vec::new(),
            staleness: 0,
            sequence: 0,
            weight_version: 0,
            transfers: 0,
            weights_sub: None,
            counters: WireCounters::default(),
        })
    }

    pub fn device_id(&self) -> u32 {
        self.device_id
    }

    pub fn mode(&self) -> TrainingMode {
        self.mode
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut Agent {
        &mut self.agent
    }

    pub fn staleness(&self) -> u64 {
        self.staleness
    }

    pub fn weight_version(&self) -> u64 {
        self.weight_version
    }

    /// Experiences produced so far (published or trained on).
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn counters(&self) -> WireCounters {
        self.counters
    }

    pub fn mailbox_len(&self) -> usize {
        self.mailbox.len()
    }

    /// Subscribes to the weights topic and uploads the initial model so the
    /// server replica starts from the device's weights. Remote mode only.
    pub fn connect(&mut self, plane: &mut ServerPlane, upload_id: u64) -> Result<(), LearnerError> {
        if self.mode != TrainingMode::Remote {
            return Ok(());
        }
        let kind = self.agent.kind();
        self.weights_sub = Some(plane.broker.subscribe(&TopicAddress::weights(self.device_id, kind).render()));
        let ack_sub = plane
            .broker
            .subscribe(&TopicAddress::upload_ack(self.device_id, kind).render());

        let params = self.agent.get_parameters();
        let blob = encode_model_blob(self.device_id, &params);
        let chunks = chunk_model(&blob, self.remote.chunk_size, self.device_id, kind, upload_id)?;
        let total = chunks.len();
        for c in chunks {
            let frame = encode_frame(&Frame::new(TopicAddress::upload(self.device_id, kind), Message::ModelChunk(c)))?;
            self.counters.upload_frames += 1;
            self.counters.upload_bytes += frame.len() as u64;
            plane.broker.publish(frame);
        }
        plane.pump(0.0);
        let acked = plane
            .broker
            .drain(ack_sub)
            .iter()
            .filter(|d| matches!(decode_frame(&d.frame), Ok(Frame { message: Message::ChunkAck(_), .. })))
            .count();
        plane.broker.unsubscribe(ack_sub);
        self.counters.acks_received += acked as u64;
        if acked != total {
            return Err(LearnerError::UploadFailed { acked, total });
        }
        Ok(())
    }

    /// Applies every mailbox entry that has arrived by `now_s`.
    pub fn apply_matured(&mut self, now_s: f64) -> Result<usize, LearnerError> {
        let (mut ready, waiting): (Vec<_>, Vec<_>) = self.mailbox.drain(..).partition(|p| p.ready_at_s <= now_s);
        self.mailbox = waiting;
        ready.sort_by(|a, b| {
            a.ready_at_s
                .total_cmp(&b.ready_at_s)
                .then(a.payload.model_version.cmp(&b.payload.model_version))
        });
        let mut applied = 0;
        for p in ready {
            // Never roll back to an older model.
            if p.payload.model_version <= self.weight_version {
                continue;
            }
            self.agent.set_parameters(&p.payload.to_parameters())?;
            self.weight_version = p.payload.model_version;
            self.staleness = 0;
            applied += 1;
        }
        Ok(applied)
    }

    /// Runs one task through observe, decide, execute and learn.
    pub fn step(
        &mut self,
        env: &mut OffloadEnv,
        plane: Option<&mut ServerPlane>,
        task: &TaskSpec,
        next_task: Option<&TaskSpec>,
    ) -> Result<ClientStep, LearnerError> {
        self.step_with(env, plane, task, next_task, None)
    }

    /// As `step`, optionally overriding the agent's action (the agent still
    /// samples, so its random streams advance identically).
    pub fn step_with(
        &mut self,
        env: &mut OffloadEnv,
        plane: Option<&mut ServerPlane>,
        task: &TaskSpec,
        next_task: Option<&TaskSpec>,
        force_action: Option<u8>,
    ) -> Result<ClientStep, LearnerError> {
        let now_s = task.arrival_time;
        self.apply_matured(now_s)?;

        let observed = env.observe(task);
        let state_vector = env.normalize(&observed);
        let weight_version = self.weight_version;
        let started = Instant::now();
        let mut decision = self.agent.select_action(&state_vector)?;
        decision.decision_elapsed_s = started.elapsed().as_secs_f64();
        if let Some(a) = force_action {
            decision.action = a;
        }
        self.staleness += 1;
        let staleness = self.staleness;

        let outcome = env.step(task, decision.action, next_task)?;
        let experience = Experience {
            device_id: self.device_id,
            model_kind: self.agent.kind(),
            sequence: self.sequence,
            state: state_vector,
            action: decision.action,
            reward: outcome.reward as f32,
            next_state: env.normalize(&outcome.next_state),
            done: next_task.is_none(),
        };
        self.sequence += 1;

        let device = &env.config().device;
        let (train_time_ms, train_energy_j) = match self.mode {
            TrainingMode::Local => {
                self.agent.train_step(&experience)?;
                self.weight_version += 1;
                self.staleness = 0;
                (device.train_time_ms, device.train_energy_j)
            }
            TrainingMode::Remote => {
                let plane = plane.ok_or(LearnerError::NoServer)?;
                self.publish(plane, &experience, &observed, now_s)?;
                (device.publish_time_ms, device.publish_energy_j)
            }
        };

        Ok(ClientStep {
            state_vector,
            decision,
            total_latency_ms: outcome.latency.total_ms + train_time_ms,
            total_energy_j: outcome.energy_j + train_energy_j,
            outcome,
            staleness,
            weight_version,
            train_time_ms,
            train_energy_j,
        })
    }

    fn leg_delay_ms(&mut self, bytes: usize, observed: &ObservedState) -> Option<f64> {
        let id = self.transfers;
        self.transfers += 1;
        let transit = self.link.transit(0.0, id);
        if !transit.delivered {
            return None;
        }
        let serialization = match self.remote.bandwidth {
            LinkBandwidth::Unlimited => 0.0,
            LinkBandwidth::Observed if observed.throughput_mbps > 0.0 => {
                transfer_ms(bytes as u64, observed.throughput_mbps)
            }
            LinkBandwidth::Observed => return None,
            LinkBandwidth::Fixed { mbps } => transfer_ms(bytes as u64, mbps),
        };
        Some(transit.delay_ms + serialization)
    }

    fn publish(
        &mut self,
        plane: &mut ServerPlane,
        e: &Experience,
        observed: &ObservedState,
        now_s: f64,
    ) -> Result<(), LearnerError> {
        let frame = encode_frame(&Frame::new(
            TopicAddress::experience(self.device_id, e.model_kind),
            Message::Experience(e.clone()),
        ))?;
        self.counters.experience_frames += 1;
        self.counters.experience_bytes += frame.len() as u64;
        let Some(up_ms) = self.leg_delay_ms(frame.len(), observed) else {
            self.counters.experiences_lost += 1;
            return Ok(());
        };
        let sub = *self.weights_sub.get_or_insert_with(|| {
            plane
                .broker
                .subscribe(&TopicAddress::weights(e.device_id, e.model_kind).render())
        });
        let server_done_s = now_s + (up_ms + self.remote.server_step_ms) / 1000.0;
        plane.broker.publish(frame);
        plane.pump(server_done_s);

        for d in plane.broker.drain(sub) {
            let Ok(Frame {
                message: Message::Weights(w),
                ..
            }) = decode_frame(&d.frame)
            else {
                continue;
            };
            match self.leg_delay_ms(d.frame.len(), observed) {
                Some(down_ms) => {
                    self.counters.weights_frames += 1;
                    self.counters.weights_bytes += d.frame.len() as u64;
                    self.mailbox.push(PendingWeights {
                        ready_at_s: server_done_s + down_ms / 1000.0,
                        payload: w,
                    });
                }
                None => self.counters.weights_lost += 1,
            }
        }
        Ok(())
    }
}
