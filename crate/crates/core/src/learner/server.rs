//! Server side of remote training: one replica learner per (device, kind),
//! a manager that routes frames to them, and the model upload receiver.

use std::collections::{BTreeMap, BTreeSet};

use crate::agents::{Agent, AgentConfig, Experience, ModelKind, ModelParameters};
use crate::learner::broker::{Broker, Delivery, SubscriptionId};
use crate::learner::LearnerError;
use crate::wire::{
    decode_frame, decode_model_blob, encode_frame, Channel, ChunkAck, ChunkAssembly, Direction, Frame, Message,
    ModelChunkPayload, TopicAddress, WeightsPayload, WireError,
};

pub type LearnerKey = (u32, ModelKind);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LearnerStats {
    pub received: u64,
    pub processed: u64,
    pub duplicates: u64,
    /// Experiences the agent refused (e.g. non-finite values); skipped.
    pub rejected: u64,
}

/// Replica trainer for a single device's stream.
#[derive(Debug, Clone)]
pub struct ServerLearner {
    device_id: u32,
    model_kind: ModelKind,
    agent: Agent,
    model_version: u64,
    next_expected: u64,
    pending: BTreeMap<u64, Experience>,
    stats: LearnerStats,
}

impl ServerLearner {
    pub fn new(device_id: u32, model_kind: ModelKind, cfg: &AgentConfig) -> Self {
        Self {
            device_id,
            model_kind,
            agent: Agent::new(model_kind, cfg),
            model_version: 0,
            next_expected: 0,
            pending: BTreeMap::new(),
            stats: LearnerStats::default(),
        }
    }

    pub fn key(&self) -> LearnerKey {
        (self.device_id, self.model_kind)
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn model_version(&self) -> u64 {
        self.model_version
    }

    pub fn next_expected(&self) -> u64 {
        self.next_expected
    }

    /// Experiences held back waiting for an earlier sequence number.
    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    pub fn stats(&self) -> LearnerStats {
        self.stats
    }

    pub fn weights(&self) -> WeightsPayload {
        let p = self.agent.get_parameters();
        WeightsPayload {
            device_id: self.device_id,
            model_kind: self.model_kind,
            model_version: self.model_version,
            weights: p.weights,
        }
    }

    /// Replaces the replica's weights with an uploaded model.
    pub fn install(&mut self, p: &ModelParameters) -> Result<(), LearnerError> {
        self.agent.set_parameters(p)?;
        self.model_version = self.model_version.max(p.version);
        Ok(())
    }

    /// Trains on every experience that is now in sequence and returns one
    /// weights message per training step.
    pub fn on_experience(&mut self, e: Experience) -> Result<Vec<WeightsPayload>, LearnerError> {
        if (e.device_id, e.model_kind) != self.key() {
            return Err(LearnerError::Misrouted {
                learner: self.key(),
                experience: (e.device_id, e.model_kind),
            });
        }
        self.stats.received += 1;
        if e.sequence < self.next_expected || self.pending.contains_key(&e.sequence) {
            self.stats.duplicates += 1;
            return Ok(Vec::new());
        }
        self.pending.insert(e.sequence, e);
        let mut out = Vec::new();
        while let Some(e) = self.pending.remove(&self.next_expected) {
            self.next_expected += 1;
            match self.agent.train_step(&e) {
                Ok(_) => {
                    self.model_version += 1;
                    self.stats.processed += 1;
                    out.push(self.weights());
                }
                Err(_) => self.stats.rejected += 1,
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadStatus {
    Incomplete { received: u32, total: u32 },
    Complete,
    Expired,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChunkOutcome {
    Progress { received: u32, total: u32 },
    Completed(ModelParameters),
    Rejected(WireError),
    /// The upload already finished with the given status.
    Finished(UploadStatus),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverCounters {
    pub chunks: u64,
    pub completed: u64,
    pub expired: u64,
    pub rejected: u64,
}

pub type UploadKey = (u32, ModelKind, u64);

#[derive(Debug, Clone)]
struct PendingUpload {
    asm: ChunkAssembly,
    last_activity_s: f64,
}

/// Reassembles chunked model uploads, keyed by (device, kind, upload id).
#[derive(Debug, Clone)]
pub struct ModelReceiver {
    timeout_s: f64,
    buffers: BTreeMap<UploadKey, PendingUpload>,
    finished: BTreeMap<UploadKey, UploadStatus>,
    counters: ReceiverCounters,
}

impl ModelReceiver {
    pub fn new(timeout_s: f64) -> Self {
        Self {
            timeout_s,
            buffers: BTreeMap::new(),
            finished: BTreeMap::new(),
            counters: ReceiverCounters::default(),
        }
    }

    pub fn counters(&self) -> ReceiverCounters {
        self.counters
    }

    pub fn in_flight(&self) -> usize {
        self.buffers.len()
    }

    pub fn status(&self, key: UploadKey) -> Option<UploadStatus> {
        if let Some(s) = self.finished.get(&key) {
            return Some(*s);
        }
        self.buffers.get(&key).map(|p| UploadStatus::Incomplete {
            received: p.asm.received(),
            total: p.asm.total(),
        })
    }

    /// Reclaims uploads idle for longer than the timeout.
    pub fn expire(&mut self, now_s: f64) -> Vec<UploadKey> {
        let stale: Vec<UploadKey> = self
            .buffers
            .iter()
            .filter(|(_, p)| now_s - p.last_activity_s > self.timeout_s)
            .map(|(k, _)| *k)
            .collect();
        for k in &stale {
            self.buffers.remove(k);
            self.finished.insert(*k, UploadStatus::Expired);
            self.counters.expired += 1;
        }
        stale
    }

    pub fn on_chunk(&mut self, c: &ModelChunkPayload, now_s: f64) -> ChunkOutcome {
        self.expire(now_s);
        self.counters.chunks += 1;
        let key = (c.device_id, c.model_kind, c.upload_id);
        if let Some(s) = self.finished.get(&key) {
            return ChunkOutcome::Finished(*s);
        }
        let pending = self.buffers.entry(key).or_insert_with(|| PendingUpload {
            asm: ChunkAssembly::new(c),
            last_activity_s: now_s,
        });
        pending.last_activity_s = now_s;
        if let Err(e) = pending.asm.insert(c) {
            self.reject(key);
            return ChunkOutcome::Rejected(e);
        }
        let Some(blob) = pending.asm.assemble() else {
            return ChunkOutcome::Progress {
                received: pending.asm.received(),
                total: pending.asm.total(),
            };
        };
        self.buffers.remove(&key);
        let checked = decode_model_blob(&blob).and_then(|w| {
            if (w.device_id, w.model_kind) != (c.device_id, c.model_kind) {
                return Err(WireError::ChunkIntegrity(format!(
                    "blob is for ({}, {}), upload is ({}, {})",
                    w.device_id, w.model_kind, c.device_id, c.model_kind
                )));
            }
            w.check_param_count()?;
            Ok(w.to_parameters())
        });
        match checked {
            Ok(p) => {
                self.finished.insert(key, UploadStatus::Complete);
                self.counters.completed += 1;
                ChunkOutcome::Completed(p)
            }
            Err(e) => {
                self.reject(key);
                ChunkOutcome::Rejected(e)
            }
        }
    }

    fn reject(&mut self, key: UploadKey) {
        self.buffers.remove(&key);
        self.finished.insert(key, UploadStatus::Rejected);
        self.counters.rejected += 1;
    }
}

/// Per-(device, kind) routing ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouteLedger {
    pub experiences_routed: u64,
    pub misrouted: u64,
    pub weights_sent: u64,
    pub chunks_routed: u64,
    pub models_installed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManagerCounters {
    pub frames: u64,
    pub undecodable: u64,
    /// Decodable frames on a topic or channel the server does not serve.
    pub unroutable: u64,
}

/// Owns every learner and the upload receiver; routes by topic.
#[derive(Debug, Clone)]
pub struct ServerManager {
    agent_cfg: AgentConfig,
    learners: BTreeMap<LearnerKey, ServerLearner>,
    receiver: ModelReceiver,
    routes: BTreeMap<LearnerKey, RouteLedger>,
    counters: ManagerCounters,
    max_concurrent_learners: usize,
}

/// Everything a server subscribes to.
pub const SERVER_FILTER: &str = "client/#";

impl ServerManager {
    pub fn new(agent_cfg: AgentConfig, upload_timeout_s: f64, max_concurrent_learners: usize) -> Self {
        Self {
            agent_cfg,
            learners: BTreeMap::new(),
            receiver: ModelReceiver::new(upload_timeout_s),
            routes: BTreeMap::new(),
            counters: ManagerCounters::default(),
            max_concurrent_learners: max_concurrent_learners.max(1),
        }
    }

    pub fn learner(&self, key: LearnerKey) -> Option<&ServerLearner> {
        self.learners.get(&key)
    }

    pub fn learners(&self) -> impl Iterator<Item = &ServerLearner> {
        self.learners.values()
    }

    pub fn receiver(&self) -> &ModelReceiver {
        &self.receiver
    }

    pub fn route(&self, key: LearnerKey) -> RouteLedger {
        self.routes.get(&key).copied().unwrap_or_default()
    }

    pub fn counters(&self) -> ManagerCounters {
        self.counters
    }

    fn learner_mut(&mut self, key: LearnerKey) -> &mut ServerLearner {
        let cfg = &self.agent_cfg;
        self.learners
            .entry(key)
            .or_insert_with(|| ServerLearner::new(key.0, key.1, cfg))
    }

    /// Handles one encoded frame and returns the frames to publish back.
    pub fn dispatch(&mut self, bytes: &[u8], now_s: f64) -> Vec<Vec<u8>> {
        self.counters.frames += 1;
        match self.classify(bytes) {
            Routed::Experience(key, e) => self.train(key, vec![e]),
            Routed::Chunk(key, c) => self.on_chunk(key, &c, now_s),
            Routed::Dropped => Vec::new(),
        }
    }

    /// Like repeated `dispatch`, but runs distinct learners on worker
    /// threads (at most `max_concurrent_learners` at once). Per-topic order
    /// of both inputs and outputs is preserved.
    pub fn dispatch_batch(&mut self, frames: &[&[u8]], now_s: f64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut batch: BTreeMap<LearnerKey, Vec<Experience>> = BTreeMap::new();
        for bytes in frames {
            self.counters.frames += 1;
            match self.classify(bytes) {
                Routed::Experience(key, e) => batch.entry(key).or_default().push(e),
                Routed::Chunk(key, c) => {
                    // An upload may reset a learner; finish earlier experiences first.
                    out.extend(self.train_concurrent(std::mem::take(&mut batch)));
                    out.extend(self.on_chunk(key, &c, now_s));
                }
                Routed::Dropped => {}
            }
        }
        out.extend(self.train_concurrent(batch));
        out
    }

    /// Drains `sub` and publishes every reply; returns frames handled.
    pub fn pump(&mut self, broker: &mut Broker, sub: SubscriptionId, now_s: f64) -> usize {
        let deliveries: Vec<Delivery> = broker.drain(sub);
        let frames: Vec<&[u8]> = deliveries.iter().map(|d| &d.frame[..]).collect();
        let replies = if self.max_concurrent_learners > 1 {
            self.dispatch_batch(&frames, now_s)
        } else {
            frames.iter().flat_map(|f| self.dispatch(f, now_s)).collect()
        };
        for r in replies {
            broker.publish(r);
        }
        deliveries.len()
    }

    fn classify(&mut self, bytes: &[u8]) -> Routed {
        let Ok(Frame { topic, message }) = decode_frame(bytes) else {
            self.counters.undecodable += 1;
            return Routed::Dropped;
        };
        let Ok(addr) = TopicAddress::parse(&topic) else {
            self.counters.unroutable += 1;
            return Routed::Dropped;
        };
        let key = (addr.device_id, addr.model_kind);
        match (addr.direction, addr.channel, message) {
            (Direction::ClientToServer, Channel::Experience, Message::Experience(e)) => {
                if (e.device_id, e.model_kind) != key {
                    self.routes.entry(key).or_default().misrouted += 1;
                    return Routed::Dropped;
                }
                self.routes.entry(key).or_default().experiences_routed += 1;
                Routed::Experience(key, e)
            }
            (Direction::ClientToServer, Channel::ModelUpload, Message::ModelChunk(c)) => {
                if (c.device_id, c.model_kind) != key {
                    self.routes.entry(key).or_default().misrouted += 1;
                    return Routed::Dropped;
                }
                self.routes.entry(key).or_default().chunks_routed += 1;
                Routed::Chunk(key, c)
            }
            _ => {
                self.counters.unroutable += 1;
                Routed::Dropped
            }
        }
    }

    fn train(&mut self, key: LearnerKey, exps: Vec<Experience>) -> Vec<Vec<u8>> {
        let learner = self.learner_mut(key);
        let weights: Vec<WeightsPayload> = exps
            .into_iter()
            .flat_map(|e| learner.on_experience(e).expect("routing checked the key"))
            .collect();
        self.emit_weights(key, weights)
    }

    fn train_concurrent(&mut self, batch: BTreeMap<LearnerKey, Vec<Experience>>) -> Vec<Vec<u8>> {
        if batch.is_empty() {
            return Vec::new();
        }
        let mut work: Vec<(ServerLearner, Vec<Experience>)> = batch
            .into_iter()
            .map(|(key, exps)| {
                self.learner_mut(key);
                (self.learners.remove(&key).expect("just created"), exps)
            })
            .collect();
        let mut results: Vec<(ServerLearner, Vec<WeightsPayload>)> = Vec::with_capacity(work.len());
        while !work.is_empty() {
            let wave: Vec<_> = work.drain(..work.len().min(self.max_concurrent_learners)).collect();
            let done: Vec<(ServerLearner, Vec<WeightsPayload>)> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .into_iter()
                    .map(|(mut learner, exps)| {
                        s.spawn(move || {
                            let w: Vec<WeightsPayload> = exps
                                .into_iter()
                                .flat_map(|e| learner.on_experience(e).expect("routing checked the key"))
                                .collect();
                            (learner, w)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("learner thread panicked")).collect()
            });
            results.extend(done);
        }
        let mut out = Vec::new();
        for (learner, weights) in results {
            let key = learner.key();
            self.learners.insert(key, learner);
            out.extend(self.emit_weights(key, weights));
        }
        out
    }

    fn emit_weights(&mut self, key: LearnerKey, weights: Vec<WeightsPayload>) -> Vec<Vec<u8>> {
        let topic = TopicAddress::weights(key.0, key.1);
        self.routes.entry(key).or_default().weights_sent += weights.len() as u64;
        weights
            .into_iter()
            .map(|w| encode_frame(&Frame::new(topic, Message::Weights(w))).expect("weights frame fits"))
            .collect()
    }

    fn on_chunk(&mut self, key: LearnerKey, c: &ModelChunkPayload, now_s: f64) -> Vec<Vec<u8>> {
        let outcome = self.receiver.on_chunk(c, now_s);
        let acked = match outcome {
            ChunkOutcome::Progress { .. } => true,
            ChunkOutcome::Finished(s) => s == UploadStatus::Complete,
            ChunkOutcome::Completed(p) => {
                let installed = self.learner_mut(key).install(&p).is_ok();
                if installed {
                    self.routes.entry(key).or_default().models_installed += 1;
                }
                installed
            }
            ChunkOutcome::Rejected(_) => false,
        };
        if !acked {
            return Vec::new();
        }
        let ack = ChunkAck {
            device_id: c.device_id,
            model_kind: c.model_kind,
            upload_id: c.upload_id,
            chunk_index: c.chunk_index,
        };
        vec![encode_frame(&Frame::new(TopicAddress::upload_ack(key.0, key.1), Message::ChunkAck(ack))).expect("ack fits")]
    }

    /// Keys with any routed traffic.
    pub fn known_keys(&self) -> BTreeSet<LearnerKey> {
        self.routes.keys().chain(self.learners.keys()).copied().collect()
    }
}

enum Routed {
    Experience(LearnerKey, Experience),
    Chunk(LearnerKey, ModelChunkPayload),
    Dropped,
}
