//! In-process publish/subscribe broker with MQTT-style topic filters.
//!
//! Filters are `/`-separated; `+` matches exactly one level and `#` (last
//! level only) matches any remainder. Each subscription owns a FIFO queue.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::wire::split_frame;

pub type FrameBytes = Arc<[u8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub topic: String,
    pub frame: FrameBytes,
}

#[derive(Debug)]
struct Subscription {
    filter: Vec<String>,
    queue: VecDeque<Delivery>,
    active: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerCounters {
    pub published: u64,
    pub deliveries: u64,
    /// Frames that matched no subscriber.
    pub dropped: u64,
    /// Frames whose envelope could not be parsed.
    pub malformed: u64,
}

#[derive(Debug, Default)]
pub struct Broker {
    subs: Vec<Subscription>,
    counters: BrokerCounters,
    dropped_by_topic: BTreeMap<String, u64>,
    tap: Option<Vec<FrameBytes>>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, filter: &str) -> SubscriptionId {
        self.subs.push(Subscription {
            filter: filter.split('/').map(str::to_string).collect(),
            queue: VecDeque::new(),
            active: true,
        });
        SubscriptionId(self.subs.len() - 1)
    }

    /// Stops delivery; frames already queued stay pollable.
    pub fn unsubscribe(&mut self, id: SubscriptionId) {
        if let Some(s) = self.subs.get_mut(id.0) {
            s.active = false;
        }
    }

    /// Delivers `frame` once to every matching subscriber and returns how
    /// many received it.
    pub fn publish(&mut self, frame: impl Into<FrameBytes>) -> usize {
        let frame: FrameBytes = frame.into();
        self.counters.published += 1;
        if let Some(tap) = self.tap.as_mut() {
            tap.push(frame.clone());
        }
        let topic = match split_frame(&frame) {
            Ok(raw) => raw.topic.to_string(),
            Err(_) => {
                self.counters.malformed += 1;
                return 0;
            }
        };
        let levels: Vec<&str> = topic.split('/').collect();
        let mut n = 0;
        for s in self.subs.iter_mut().filter(|s| s.active) {
            if filter_matches(&s.filter, &levels) {
                s.queue.push_back(Delivery {
                    topic: topic.clone(),
                    frame: frame.clone(),
                });
                n += 1;
            }
        }
        if n == 0 {
            self.counters.dropped += 1;
            *self.dropped_by_topic.entry(topic).or_default() += 1;
        }
        self.counters.deliveries += n as u64;
        n
    }

    pub fn poll(&mut self, id: SubscriptionId) -> Option<Delivery> {
        self.subs.get_mut(id.0)?.queue.pop_front()
    }

    pub fn drain(&mut self, id: SubscriptionId) -> Vec<Delivery> {
        self.subs
            .get_mut(id.0)
            .map(|s| s.queue.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn pending(&self, id: SubscriptionId) -> usize {
        self.subs.get(id.0).map_or(0, |s| s.queue.len())
    }

    /// Starts recording every published frame, parseable or not.
    pub fn enable_tap(&mut self) {
        self.tap.get_or_insert_with(Vec::new);
    }

    /// Frames recorded since the last call.
    pub fn take_tapped(&mut self) -> Vec<FrameBytes> {
        self.tap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn counters(&self) -> BrokerCounters {
        self.counters
    }

    pub fn dropped_on(&self, topic: &str) -> u64 {
        self.dropped_by_topic.get(topic).copied().unwrap_or(0)
    }
}

pub fn filter_matches<S: AsRef<str>>(filter: &[S], levels: &[&str]) -> bool {
    let mut i = 0;
    for f in filter {
        match f.as_ref() {
            "#" => return true,
            "+" if i < levels.len() => {}
            lit if i < levels.len() && levels[i] == lit => {}
            _ => return false,
        }
        i += 1;
    }
    i == levels.len()
}
