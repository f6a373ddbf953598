//! Simulated lab for learning-based task offloading on edge devices.
//!
//! Devices generate periodic compute tasks and decide per task whether to run
//! locally, on a nearby MEC server or in the cloud. Decisions come from an
//! actor-critic or a DQN agent that trains either on the device or on a
//! remote server fed over a small binary wire protocol.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod env;
pub mod experiment;
pub mod learner;
pub mod netem;
pub mod nn;
pub mod signal;
pub mod taskgen;
pub mod transport;
pub mod wire;
