//! Binary message layer between clients and the training server.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! magic      2 bytes   0x45 0x4F
//! version    u8        1
//! msg_type   u8        1 = Experience, 2 = Weights, 3 = ModelChunk, 4 = ChunkAck
//! topic_len  u16
//! topic      topic_len bytes of UTF-8
//! payload_len u32
//! payload    payload_len bytes
//! ```
//!
//! Payload layouts:
//!
//! ```text
//! Experience  device_id u32 | kind u8 | sequence u64 | state 5*f32 | action u8
//!             | reward f32 | next_state 5*f32 | done u8                (59 bytes)
//! Weights     device_id u32 | kind u8 | model_version u64 | weight_count u32
//!             | weight_count * f32
//! ModelChunk  device_id u32 | kind u8 | upload_id u64 | chunk_index u32
//!             | chunk_total u32 | chunk bytes (rest of payload)
//! ChunkAck    device_id u32 | kind u8 | upload_id u64 | chunk_index u32   (17 bytes)
//! ```
//!
//! Kind bytes are 0 = ac, 1 = dqn. Floats travel as raw IEEE-754 bits.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::agents::{Experience, ModelKind, ModelParameters, StateVector, NUM_ACTIONS, STATE_DIM};

pub const MAGIC: [u8; 2] = [0x45, 0x4F];
pub const WIRE_VERSION: u8 = 1;
pub const FRAME_OVERHEAD: usize = 10;
pub const EXPERIENCE_PAYLOAD_LEN: usize = 4 + 1 + 8 + 4 * STATE_DIM + 1 + 4 + 4 * STATE_DIM + 1;
pub const WEIGHTS_HEADER_LEN: usize = 4 + 1 + 8 + 4;
pub const CHUNK_HEADER_LEN: usize = 4 + 1 + 8 + 4 + 4;
pub const CHUNK_ACK_LEN: usize = 4 + 1 + 8 + 4;
pub const DEFAULT_CHUNK_SIZE: usize = 64 * 1024;
pub const TOPIC_VERSION: &str = "v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic bytes {0:#04x} {1:#04x}")]
    BadMagic(u8, u8),
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("invalid action {0}")]
    InvalidAction(u8),
    #[error("invalid model kind byte {0}")]
    InvalidModelKind(u8),
    #[error("invalid done flag {0}")]
    InvalidFlag(u8),
    #[error("topic is not valid UTF-8")]
    TopicEncoding,
    #[error("topic is {0} bytes, limit is 65535")]
    TopicTooLong(usize),
    #[error("payload is {0} bytes, exceeds the u32 length field")]
    PayloadTooLarge(usize),
    #[error("chunk index {index} out of range for total {total}")]
    ChunkIndex { index: u32, total: u32 },
    #[error("chunk integrity: {0}")]
    ChunkIntegrity(String),
    #[error("chunk size must be positive")]
    ZeroChunkSize,
    #[error("weights carry {got} values, a {kind} model has {expected}")]
    WeightCount { kind: ModelKind, expected: usize, got: usize },
    #[error(transparent)]
    Topic(#[from] TopicError),
}

impl WireError {
    /// Stable numeric code for each error class.
    pub fn code(&self) -> u16 {
        match self {
            WireError::BadMagic(..) => 1,
            WireError::BadVersion(_) => 2,
            WireError::UnknownMessageType(_) => 3,
            WireError::Truncated { .. } => 4,
            WireError::SizeMismatch { .. } => 5,
            WireError::InvalidAction(_) => 6,
            WireError::InvalidModelKind(_) => 7,
            WireError::InvalidFlag(_) => 8,
            WireError::TopicEncoding => 9,
            WireError::TopicTooLong(_) => 10,
            WireError::PayloadTooLarge(_) => 11,
            WireError::ChunkIndex { .. } => 12,
            WireError::ChunkIntegrity(_) => 13,
            WireError::ZeroChunkSize => 14,
            WireError::WeightCount { .. } => 15,
            WireError::Topic(_) => 16,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopicError {
    #[error("topic {0:?} does not have five segments")]
    Malformed(String),
    #[error("unknown direction {0:?}")]
    UnknownDirection(String),
    #[error("invalid device id {0:?}")]
    DeviceId(String),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("unknown model kind {0:?}")]
    UnknownModelKind(String),
    #[error("unknown topic version {0:?}")]
    UnknownVersion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Experience,
    Weights,
    ModelUpload,
}

/// `{client|server}/{device}/{experience|weights|upload}/{ac|dqn}/v1`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicAddress {
    pub direction: Direction,
    pub device_id: u32,
    pub channel: Channel,
    pub model_kind: ModelKind,
}

impl TopicAddress {
    pub fn experience(device_id: u32, model_kind: ModelKind) -> Self {
        Self {
            direction: Direction::ClientToServer,
            device_id,
            channel: Channel::Experience,
            model_kind,
        }
    }

    pub fn weights(device_id: u32, model_kind: ModelKind) -> Self {
        Self {
            direction: Direction::ServerToClient,
            device_id,
            channel: Channel::Weights,
            model_kind,
        }
    }

    pub fn upload(device_id: u32, model_kind: ModelKind) -> Self {
        Self {
            direction: Direction::ClientToServer,
            device_id,
            channel: Channel::ModelUpload,
            model_kind,
        }
    }

    /// Where the server acknowledges upload chunks.
    pub fn upload_ack(device_id: u32, model_kind: ModelKind) -> Self {
        Self {
            direction: Direction::ServerToClient,
            device_id,
            channel: Channel::ModelUpload,
            model_kind,
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<Self, TopicError> {
        let parts: Vec<&str> = s.split('/').collect();
        let [dir, dev, chan, kind, version] = parts[..] else {
            return Err(TopicError::Malformed(s.to_string()));
        };
        let direction = match dir {
            "client" => Direction::ClientToServer,
            "server" => Direction::ServerToClient,
            other => return Err(TopicError::UnknownDirection(other.to_string())),
        };
        // Canonical decimal only, so parse and render stay inverse.
        let canonical = !dev.is_empty()
            && dev.bytes().all(|b| b.is_ascii_digit())
            && (dev == "0" || !dev.starts_with('0'));
        let device_id = canonical
            .then(|| dev.parse::<u32>().ok())
            .flatten()
            .ok_or_else(|| TopicError::DeviceId(dev.to_string()))?;
        let channel = match chan {
            "experience" => Channel::Experience,
            "weights" => Channel::Weights,
            "upload" => Channel::ModelUpload,
            other => return Err(TopicError::UnknownChannel(other.to_string())),
        };
        let model_kind = kind
            .parse::<ModelKind>()
            .map_err(|_| TopicError::UnknownModelKind(kind.to_string()))?;
        if version != TOPIC_VERSION {
            return Err(TopicError::UnknownVersion(version.to_string()));
        }
        Ok(Self {
            direction,
            device_id,
            channel,
            model_kind,
        })
    }
}

impl fmt::Display for TopicAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::ClientToServer => "client",
            Direction::ServerToClient => "server",
        };
        let chan = match self.channel {
            Channel::Experience => "experience",
            Channel::Weights => "weights",
            Channel::ModelUpload => "upload",
        };
        write!(f, "{dir}/{}/{chan}/{}/{TOPIC_VERSION}", self.device_id, self.model_kind.token())
    }
}

pub type ExperiencePayload = Experience;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsPayload {
    pub device_id: u32,
    pub model_kind: ModelKind,
    pub model_version: u64,
    pub weights: Vec<f32>,
}

impl WeightsPayload {
    pub fn from_parameters(device_id: u32, p: &ModelParameters) -> Self {
        Self {
            device_id,
            model_kind: p.model_kind,
            model_version: p.version,
            weights: p.weights.clone(),
        }
    }

    pub fn to_parameters(&self) -> ModelParameters {
        ModelParameters {
            model_kind: self.model_kind,
            version: self.model_version,
            weights: self.weights.clone(),
        }
    }

    /// Checks the count against the fixed architecture of `model_kind`.
    pub fn check_param_count(&self) -> Result<(), WireError> {
        let expected = self.model_kind.param_count();
        if self.weights.len() != expected {
            return Err(WireError::WeightCount {
                kind: self.model_kind,
                expected,
                got: self.weights.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelChunkPayload {
    pub device_id: u32,
    pub model_kind: ModelKind,
    pub upload_id: u64,
    pub chunk_index: u32,
    pub chunk_total: u32,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkAck {
    pub device_id: u32,
    pub model_kind: ModelKind,
    pub upload_id: u64,
    pub chunk_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Experience(ExperiencePayload),
    Weights(WeightsPayload),
    ModelChunk(ModelChunkPayload),
    ChunkAck(ChunkAck),
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Experience(_) => 1,
            Message::Weights(_) => 2,
            Message::ModelChunk(_) => 3,
            Message::ChunkAck(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub topic: String,
    pub message: Message,
}

impl Frame {
    pub fn new(topic: TopicAddress, message: Message) -> Self {
        Self {
            topic: topic.render(),
            message,
        }
    }
}

/// Encoded size of a frame carrying `payload_len` bytes on `topic`.
pub fn frame_len(topic: &str, payload_len: usize) -> usize {
    FRAME_OVERHEAD + topic.len() + payload_len
}

pub fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        Message::Experience(e) => {
            out.reserve(EXPERIENCE_PAYLOAD_LEN);
            out.extend_from_slice(&e.device_id.to_le_bytes());
            out.push(e.model_kind.code());
            out.extend_from_slice(&e.sequence.to_le_bytes());
            put_state(&mut out, &e.state);
            out.push(e.action);
            out.extend_from_slice(&e.reward.to_le_bytes());
            put_state(&mut out, &e.next_state);
            out.push(e.done as u8);
        }
        Message::Weights(w) => {
            out.reserve(WEIGHTS_HEADER_LEN + 4 * w.weights.len());
            out.extend_from_slice(&w.device_id.to_le_bytes());
            out.push(w.model_kind.code());
            out.extend_from_slice(&w.model_version.to_le_bytes());
            out.extend_from_slice(&(w.weights.len() as u32).to_le_bytes());
            for x in &w.weights {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Message::ModelChunk(c) => {
            out.reserve(CHUNK_HEADER_LEN + c.data.len());
            out.extend_from_slice(&c.device_id.to_le_bytes());
            out.push(c.model_kind.code());
            out.extend_from_slice(&c.upload_id.to_le_bytes());
            out.extend_from_slice(&c.chunk_index.to_le_bytes());
            out.extend_from_slice(&c.chunk_total.to_le_bytes());
            out.extend_from_slice(&c.data);
        }
        Message::ChunkAck(a) => {
            out.extend_from_slice(&a.device_id.to_le_bytes());
            out.push(a.model_kind.code());
            out.extend_from_slice(&a.upload_id.to_le_bytes());
            out.extend_from_slice(&a.chunk_index.to_le_bytes());
        }
    }
    out
}

fn put_state(out: &mut Vec<u8>, s: &StateVector) {
    for x in s {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let topic = frame.topic.as_bytes();
    if topic.len() > u16::MAX as usize {
        return Err(WireError::TopicTooLong(topic.len()));
    }
    let payload = encode_payload(&frame.message);
    if payload.len() > u32::MAX as usize {
        return Err(WireError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + topic.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(WIRE_VERSION);
    out.push(frame.message.msg_type());
    out.extend_from_slice(&(topic.len() as u16).to_le_bytes());
    out.extend_from_slice(topic);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WireError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn kind(&mut self) -> Result<ModelKind, WireError> {
        let b = self.u8()?;
        ModelKind::from_code(b).ok_or(WireError::InvalidModelKind(b))
    }

    fn state(&mut self) -> Result<StateVector, WireError> {
        let mut s = [0.0; STATE_DIM];
        for x in &mut s {
            *x = self.f32()?;
        }
        Ok(s)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader::new(payload);
    let fixed = |expected: usize| {
        if payload.len() != expected {
            Err(WireError::SizeMismatch {
                expected,
                found: payload.len(),
            })
        } else {
            Ok(())
        }
    };
    match msg_type {
        1 => {
            fixed(EXPERIENCE_PAYLOAD_LEN)?;
            let device_id = r.u32()?;
            let model_kind = r.kind()?;
            let sequence = r.u64()?;
            let state = r.state()?;
            let action = r.u8()?;
            if action as usize >= NUM_ACTIONS {
                return Err(WireError::InvalidAction(action));
            }
            let reward = r.f32()?;
            let next_state = r.state()?;
            let done = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(WireError::InvalidFlag(other)),
            };
            Ok(Message::Experience(Experience {
                device_id,
                model_kind,
                sequence,
                state,
                action,
                reward,
                next_state,
                done,
            }))
        }
        2 => {
            let device_id = r.u32()?;
            let model_kind = r.kind()?;
            let model_version = r.u64()?;
            let count = r.u32()? as usize;
            let expected = WEIGHTS_HEADER_LEN + count.saturating_mul(4);
            if payload.len() != expected {
                return Err(WireError::SizeMismatch {
                    expected,
                    found: payload.len(),
                });
            }
            let weights = r
                .rest()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Ok(Message::Weights(WeightsPayload {
                device_id,
                model_kind,
                model_version,
                weights,
            }))
        }
        3 => {
            let device_id = r.u32()?;
            let model_kind = r.kind()?;
            let upload_id = r.u64()?;
            let chunk_index = r.u32()?;
            let chunk_total = r.u32()?;
            if chunk_index >= chunk_total {
                return Err(WireError::ChunkIndex {
                    index: chunk_index,
                    total: chunk_total,
                });
            }
            Ok(Message::ModelChunk(ModelChunkPayload {
                device_id,
                model_kind,
                upload_id,
                chunk_index,
                chunk_total,
                data: r.rest().to_vec(),
            }))
        }
        4 => {
            fixed(CHUNK_ACK_LEN)?;
            let ack = ChunkAck {
                device_id: r.u32()?,
                model_kind: r.kind()?,
                upload_id: r.u64()?,
                chunk_index: r.u32()?,
            };
            debug_assert_eq!(r.remaining(), 0);
            Ok(Message::ChunkAck(ack))
        }
        other => Err(WireError::UnknownMessageType(other)),
    }
}

/// Parsed frame header; `payload` borrows from the input.
#[derive(Debug, Clone, Copy)]
pub struct RawFrame<'a> {
    pub msg_type: u8,
    pub topic: &'a str,
    pub payload: &'a [u8],
}

/// Validates the envelope without decoding the payload.
pub fn split_frame(bytes: &[u8]) -> Result<RawFrame<'_>, WireError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(2)?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic[0], magic[1]));
    }
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let msg_type = r.u8()?;
    if !(1..=4).contains(&msg_type) {
        return Err(WireError::UnknownMessageType(msg_type));
    }
    let topic_len = r.u16()? as usize;
    let topic = std::str::from_utf8(r.take(topic_len)?).map_err(|_| WireError::TopicEncoding)?;
    let payload_len = r.u32()? as usize;
    let payload = r.take(payload_len)?;
    if r.remaining() != 0 {
        return Err(WireError::SizeMismatch {
            expected: FRAME_OVERHEAD + topic_len + payload_len,
            found: bytes.len(),
        });
    }
    Ok(RawFrame {
        msg_type,
        topic,
        payload,
    })
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    let raw = split_frame(bytes)?;
    Ok(Frame {
        topic: raw.topic.to_string(),
        message: decode_payload(raw.msg_type, raw.payload)?,
    })
}

/// Human-readable one-line summary used by `wire-dump`.
pub fn describe_frame(frame: &Frame, encoded_len: usize) -> String {
    let body = match &frame.message {
        Message::Experience(e) => format!(
            "Experience device={} kind={} seq={} action={} reward={} done={} state={:?} next_state={:?}",
            e.device_id, e.model_kind, e.sequence, e.action, e.reward, e.done, e.state, e.next_state
        ),
        Message::Weights(w) => format!(
            "Weights device={} kind={} version={} count={}",
            w.device_id,
            w.model_kind,
            w.model_version,
            w.weights.len()
        ),
        Message::ModelChunk(c) => format!(
            "ModelChunk device={} kind={} upload={} chunk={}/{} bytes={}",
            c.device_id,
            c.model_kind,
            c.upload_id,
            c.chunk_index,
            c.chunk_total,
            c.data.len()
        ),
        Message::ChunkAck(a) => format!(
            "ChunkAck device={} kind={} upload={} chunk={}",
            a.device_id, a.model_kind, a.upload_id, a.chunk_index
        ),
    };
    format!("[{encoded_len} B] {} {body}", frame.topic)
}

/// A full model for chunked upload travels as an encoded Weights payload.
pub fn encode_model_blob(device_id: u32, p: &ModelParameters) -> Vec<u8> {
    encode_payload(&Message::Weights(WeightsPayload::from_parameters(device_id, p)))
}

pub fn decode_model_blob(blob: &[u8]) -> Result<WeightsPayload, WireError> {
    match decode_payload(2, blob)? {
        Message::Weights(w) => Ok(w),
        _ => unreachable!("type 2 decodes to Weights"),
    }
}

/// Splits `blob` into chunks of `chunk_size` (the last may be shorter). An
/// empty blob yields one empty chunk.
pub fn chunk_model(
    blob: &[u8],
    chunk_size: usize,
    device_id: u32,
    model_kind: ModelKind,
    upload_id: u64,
) -> Result<Vec<ModelChunkPayload>, WireError> {
    if chunk_size == 0 {
        return Err(WireError::ZeroChunkSize);
    }
    let pieces: Vec<&[u8]> = if blob.is_empty() {
        vec![&[][..]]
    } else {
        blob.chunks(chunk_size).collect()
    };
    let total = u32::try_from(pieces.len()).map_err(|_| WireError::PayloadTooLarge(blob.len()))?;
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(i, data)| ModelChunkPayload {
            device_id,
            model_kind,
            upload_id,
            chunk_index: i as u32,
            chunk_total: total,
            data: data.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssemblyStatus {
    Incomplete { received: u32, total: u32 },
    Complete(Vec<u8>),
}

/// Order-independent reassembly of one upload.
#[derive(Debug, Clone)]
pub struct ChunkAssembly {
    device_id: u32,
    model_kind: ModelKind,
    upload_id: u64,
    total: u32,
    chunk_len: Option<usize>,
    chunks: BTreeMap<u32, Vec<u8>>,
}

impl ChunkAssembly {
    pub fn new(first: &ModelChunkPayload) -> Self {
        Self {
            device_id: first.device_id,
            model_kind: first.model_kind,
            upload_id: first.upload_id,
            total: first.chunk_total,
            chunk_len: None,
            chunks: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> (u32, ModelKind, u64) {
        (self.device_id, self.model_kind, self.upload_id)
    }

    pub fn received(&self) -> u32 {
        self.chunks.len() as u32
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_complete(&self) -> bool {
        self.chunks.len() as u32 == self.total
    }

    /// Adds one chunk. Re-delivery of identical bytes is a no-op.
    pub fn insert(&mut self, c: &ModelChunkPayload) -> Result<(), WireError> {
        let integrity = |m: String| Err(WireError::ChunkIntegrity(m));
        if (c.device_id, c.model_kind, c.upload_id) != self.key() {
            return integrity(format!(
                "chunk for ({}, {}, {}) fed to assembly ({}, {}, {})",
                c.device_id, c.model_kind, c.upload_id, self.device_id, self.model_kind, self.upload_id
            ));
        }
        if c.chunk_total != self.total {
            return integrity(format!("chunk_total {} conflicts with {}", c.chunk_total, self.total));
        }
        if c.chunk_index >= self.total {
            return Err(WireError::ChunkIndex {
                index: c.chunk_index,
                total: self.total,
            });
        }
        if let Some(existing) = self.chunks.get(&c.chunk_index) {
            return if *existing == c.data {
                Ok(())
            } else {
                integrity(format!("chunk {} re-sent with different bytes", c.chunk_index))
            };
        }
        let is_last = c.chunk_index + 1 == self.total;
        if is_last {
            if self.total > 1 && c.data.is_empty() {
                return integrity("empty trailing chunk".into());
            }
            if let Some(len) = self.chunk_len {
                if c.data.len() > len {
                    return integrity(format!("trailing chunk of {} bytes exceeds chunk size {len}", c.data.len()));
                }
            }
        } else {
            match self.chunk_len {
                Some(len) if len != c.data.len() => {
                    return integrity(format!("chunk {} has {} bytes, expected {len}", c.chunk_index, c.data.len()));
                }
                None => {
                    if c.data.is_empty() {
                        return integrity("empty interior chunk".into());
                    }
                    if let Some(last) = self.chunks.get(&(self.total - 1)) {
                        if last.len() > c.data.len() {
                            return integrity("trailing chunk larger than interior chunks".into());
                        }
                    }
                    self.chunk_len = Some(c.data.len());
                }
                _ => {}
            }
        }
        self.chunks.insert(c.chunk_index, c.data.clone());
        Ok(())
    }

    pub fn status(&self) -> AssemblyStatus {
        match self.assemble() {
            Some(bytes) => AssemblyStatus::Complete(bytes),
            None => AssemblyStatus::Incomplete {
                received: self.received(),
                total: self.total,
            },
        }
    }

    /// The reassembled blob, once every chunk is present.
    pub fn assemble(&self) -> Option<Vec<u8>> {
        if !self.is_complete() {
            return None;
        }
        Some(self.chunks.values().flatten().copied().collect())
    }
}

pub fn assemble_chunks(chunks: &[ModelChunkPayload]) -> Result<AssemblyStatus, WireError> {
    let Some(first) = chunks.first() else {
        return Ok(AssemblyStatus::Incomplete { received: 0, total: 0 });
    };
    let mut asm = ChunkAssembly::new(first);
    for c in chunks {
        asm.insert(c)?;
    }
    Ok(asm.status())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_experience() -> Experience {
        Experience {
            device_id: 0,
            model_kind: ModelKind::Ac,
            sequence: 0,
            state: [0.0; 5],
            action: 0,
            reward: 0.0,
            next_state: [0.0; 5],
            done: false,
        }
    }

    #[test]
    fn experience_payload_is_59_bytes_and_stable() {
        assert_eq!(EXPERIENCE_PAYLOAD_LEN, 59);
        let p = encode_payload(&Message::Experience(zero_experience()));
        assert_eq!(p, vec![0u8; 59]);
        let frame = Frame::new(TopicAddress::experience(7, ModelKind::Ac), Message::Experience(zero_experience()));
        let bytes = encode_frame(&frame).unwrap();
        assert_eq!(bytes.len(), 10 + "client/7/experience/ac/v1".len() + 59);
        assert_eq!(&bytes[..6], &[0x45, 0x4F, 1, 1, 25, 0]);
        assert_eq!(decode_frame(&bytes).unwrap(), frame);
    }

    #[test]
    fn experience_field_layout() {
        let e = Experience {
            device_id: 0x0102_0304,
            model_kind: ModelKind::Dqn,
            sequence: 5,
            state: [1.0, 0.0, 0.0, 0.0, 0.0],
            action: 2,
            reward: -1.0,
            next_state: [0.0; 5],
            done: true,
        };
        let p = encode_payload(&Message::Experience(e));
        assert_eq!(&p[0..4], &[4, 3, 2, 1]);
        assert_eq!(p[4], 1);
        assert_eq!(&p[5..13], &5u64.to_le_bytes());
        assert_eq!(&p[13..17], &1.0f32.to_le_bytes());
        assert_eq!(p[33], 2);
        assert_eq!(&p[34..38], &(-1.0f32).to_le_bytes());
        assert_eq!(p[58], 1);
    }

    #[test]
    fn invalid_action_rejected() {
        let frame = Frame::new(TopicAddress::experience(1, ModelKind::Ac), Message::Experience(zero_experience()));
        let mut bytes = encode_frame(&frame).unwrap();
        let action_at = 10 + frame.topic.len() + 33;
        bytes[action_at] = 3;
        assert_eq!(decode_frame(&bytes).unwrap_err(), WireError::InvalidAction(3));
    }

    #[test]
    fn envelope_errors_are_distinct() {
        let frame = Frame::new(TopicAddress::experience(1, ModelKind::Ac), Message::Experience(zero_experience()));
        let good = encode_frame(&frame).unwrap();

        let mut b = good.clone();
        b[0] = 0;
        assert!(matches!(decode_frame(&b), Err(WireError::BadMagic(..))));
        let mut b = good.clone();
        b[2] = 2;
        assert_eq!(decode_frame(&b).unwrap_err(), WireError::BadVersion(2));
        let mut b = good.clone();
        b[3] = 9;
        assert_eq!(decode_frame(&b).unwrap_err(), WireError::UnknownMessageType(9));
        assert!(matches!(decode_frame(&good[..good.len() - 1]), Err(WireError::Truncated { .. })));
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode_frame(&b), Err(WireError::SizeMismatch { .. })));
        let mut b = good.clone();
        b[good.len() - 1] = 7;
        assert_eq!(decode_frame(&b).unwrap_err(), WireError::InvalidFlag(7));

        let codes: std::collections::BTreeSet<u16> = [
            WireError::BadMagic(0, 0),
            WireError::BadVersion(2),
            WireError::UnknownMessageType(9),
            WireError::Truncated { needed: 1, available: 0 },
            WireError::SizeMismatch { expected: 1, found: 0 },
            WireError::InvalidAction(3),
        ]
        .iter()
        .map(WireError::code)
        .collect();
        assert_eq!(codes.len(), 6);
    }

    #[test]
    fn weights_count_must_match_payload() {
        let w = WeightsPayload {
            device_id: 3,
            model_kind: ModelKind::Dqn,
            model_version: 9,
            weights: vec![1.5, -2.0, 0.25],
        };
        let mut p = encode_payload(&Message::Weights(w.clone()));
        assert_eq!(decode_payload(2, &p).unwrap(), Message::Weights(w.clone()));
        p[13] = 4;
        assert!(matches!(decode_payload(2, &p), Err(WireError::SizeMismatch { .. })));
        assert!(matches!(w.check_param_count(), Err(WireError::WeightCount { .. })));
    }

    #[test]
    fn huge_declared_count_does_not_allocate() {
        let mut p = vec![0u8; WEIGHTS_HEADER_LEN];
        p[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_payload(2, &p), Err(WireError::SizeMismatch { .. })));
    }

    #[test]
    fn topic_render_and_parse() {
        let t = TopicAddress::experience(7, ModelKind::Ac);
        assert_eq!(t.render(), "client/7/experience/ac/v1");
        assert_eq!(
            TopicAddress::parse("server/7/weights/dqn/v1").unwrap(),
            TopicAddress::weights(7, ModelKind::Dqn)
        );
        assert_eq!(TopicAddress::upload(3, ModelKind::Dqn).render(), "client/3/upload/dqn/v1");
        assert_eq!(
            TopicAddress::parse("client/7/experience/ac/v2").unwrap_err(),
            TopicError::UnknownVersion("v2".into())
        );
        assert!(matches!(TopicAddress::parse("client/7/logs/ac/v1"), Err(TopicError::UnknownChannel(_))));
        assert!(matches!(TopicAddress::parse("client/07/weights/ac/v1"), Err(TopicError::DeviceId(_))));
        assert!(matches!(TopicAddress::parse("client/-1/weights/ac/v1"), Err(TopicError::DeviceId(_))));
        assert!(matches!(TopicAddress::parse("client/7/weights/ppo/v1"), Err(TopicError::UnknownModelKind(_))));
        assert!(matches!(TopicAddress::parse("client/7/weights/ac"), Err(TopicError::Malformed(_))));
        assert!(matches!(TopicAddress::parse("broker/7/weights/ac/v1"), Err(TopicError::UnknownDirection(_))));
        assert_eq!(TopicAddress::parse("client/0/upload/ac/v1").unwrap().device_id, 0);
    }

    #[test]
    fn chunk_sizes() {
        let blob: Vec<u8> = (0..10).collect();
        let chunks = chunk_model(&blob, 4, 1, ModelKind::Ac, 42).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(|c| c.data.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(chunks.iter().all(|c| c.chunk_total == 3));
        assert_eq!(chunk_model(&blob, 0, 1, ModelKind::Ac, 42).unwrap_err(), WireError::ZeroChunkSize);
    }

    #[test]
    fn shuffled_duplicated_and_missing_chunks() {
        let blob: Vec<u8> = (0..=255).cycle().take(1000).collect();
        let mut chunks = chunk_model(&blob, 64, 1, ModelKind::Dqn, 1).unwrap();
        chunks.reverse();
        chunks.push(chunks[3].clone());
        assert_eq!(assemble_chunks(&chunks).unwrap(), AssemblyStatus::Complete(blob.clone()));

        let mut missing = chunks.clone();
        missing.retain(|c| c.chunk_index != 5);
        assert_eq!(
            assemble_chunks(&missing).unwrap(),
            AssemblyStatus::Incomplete { received: 15, total: 16 }
        );
    }

    #[test]
    fn chunk_integrity_errors() {
        let blob: Vec<u8> = (0..100).collect();
        let chunks = chunk_model(&blob, 30, 1, ModelKind::Ac, 5).unwrap();
        let mut asm = ChunkAssembly::new(&chunks[0]);
        asm.insert(&chunks[0]).unwrap();

        let mut conflicting = chunks[0].clone();
        conflicting.data[0] ^= 1;
        assert!(matches!(asm.insert(&conflicting), Err(WireError::ChunkIntegrity(_))));

        let mut other_total = chunks[1].clone();
        other_total.chunk_total = 9;
        assert!(matches!(asm.insert(&other_total), Err(WireError::ChunkIntegrity(_))));

        let mut short = chunks[1].clone();
        short.data.truncate(10);
        assert!(matches!(asm.insert(&short), Err(WireError::ChunkIntegrity(_))));

        let mut foreign = chunks[1].clone();
        foreign.upload_id = 6;
        assert!(matches!(asm.insert(&foreign), Err(WireError::ChunkIntegrity(_))));
    }

    #[test]
    fn model_blob_round_trip() {
        let p = ModelParameters {
            model_kind: ModelKind::Dqn,
            version: 12,
            weights: vec![0.5, -1.0, 3.25],
        };
        let blob = encode_model_blob(4, &p);
        let back = decode_model_blob(&blob).unwrap();
        assert_eq!((back.device_id, back.to_parameters()), (4, p));
        assert!(decode_model_blob(&blob[..blob.len() - 1]).is_err());
    }
}
