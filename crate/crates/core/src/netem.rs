//! Impairment model for the base-station to cloud path.
//!
//! Every transfer draws its own randomness from a ChaCha8 stream selected by
//! `transfer_id`, so results depend only on `(seed, transfer_id)` plus the
//! Gilbert-Elliott chain state when burst loss is enabled. The chain has
//! its own sequential stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const GE_STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid netem config: {0}")]
pub struct NetemConfigError(pub String);

/// Gilbert-Elliott burst-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstLoss {
    pub p_good_to_bad: f64,
    pub p_bad_to_good: f64,
    pub loss_in_bad: f64,
    pub loss_in_good: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetemConfig {
    pub base_latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
    /// When set, replaces the independent `loss_rate`.
    pub burst: Option<BurstLoss>,
    pub corruption_rate: f64,
    pub reorder_rate: f64,
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl Default for NetemConfig {
    fn default() -> Self {
        Self {
            base_latency_ms: 0.0,
            jitter_ms: 0.0,
            loss_rate: 0.0,
            burst: None,
            corruption_rate: 0.0,
            reorder_rate: 0.0,
            duplicate_rate: 0.0,
            seed: 0,
        }
    }
}

impl NetemConfig {
    pub fn validate(&self) -> Result<(), NetemConfigError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(NetemConfigError(format!("{name} = {p} is not a probability")))
            }
        };
        prob("loss_rate", self.loss_rate)?;
        prob("corruption_rate", self.corruption_rate)?;
        prob("reorder_rate", self.reorder_rate)?;
        prob("duplicate_rate", self.duplicate_rate)?;
        if let Some(b) = &self.burst {
            prob("burst.p_good_to_bad", b.p_good_to_bad)?;
            prob("burst.p_bad_to_good", b.p_bad_to_good)?;
            prob("burst.loss_in_bad", b.loss_in_bad)?;
            prob("burst.loss_in_good", b.loss_in_good)?;
        }
        if !(self.base_latency_ms >= 0.0 && self.base_latency_ms.is_finite()) {
            return Err(NetemConfigError("base_latency_ms must be >= 0".into()));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(NetemConfigError("jitter_ms must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitResult {
    pub delivered: bool,
    pub corrupted: bool,
    pub duplicated: bool,
    /// Meaningless when `delivered` is false.
    pub delay_ms: f64,
    pub reordered: bool,
}

/// Two-state burst-loss chain.
#[derive(Debug, Clone)]
pub struct GilbertElliott {
    params: BurstLoss,
    bad: bool,
    rng: ChaCha8Rng,
}

impl GilbertElliott {
    /// Starts in the good state.
    pub fn new(params: BurstLoss, seed: u64) -> Self {
        Self {
            params,
            bad: false,
            rng: ChaCha8Rng::seed_from_u64(seed ^ GE_STREAM_SALT),
        }
    }

    pub fn is_bad(&self) -> bool {
        self.bad
    }

    /// Advances the chain one step and returns the new state (`true` = bad).
    pub fn step(&mut self) -> bool {
        let u: f64 = self.rng.random();
        self.bad = if self.bad {
            u >= self.params.p_bad_to_good
        } else {
            u < self.params.p_good_to_bad
        };
        self.bad
    }

    pub fn loss_probability(&self) -> f64 {
        if self.bad {
            self.params.loss_in_bad
        } else {
            self.params.loss_in_good
        }
    }

    /// Long-run fraction of steps spent in the bad state.
    pub fn stationary_bad_fraction(&self) -> f64 {
        let BurstLoss {
            p_good_to_bad: gb,
            p_bad_to_good: bg,
            ..
        } = self.params;
        if gb + bg == 0.0 {
            0.0
        } else {
            gb / (gb + bg)
        }
    }
}

/// One impaired link.
#[derive(Debug, Clone)]
pub struct NetemLink {
    cfg: NetemConfig,
    chain: Option<GilbertElliott>,
}

impl NetemLink {
    pub fn new(cfg: NetemConfig) -> Result<Self, NetemConfigError> {
        cfg.validate()?;
        let chain = cfg.burst.map(|b| GilbertElliott::new(b, cfg.seed));
        Ok(Self { cfg, chain })
    }

    pub fn config(&self) -> &NetemConfig {
        &self.cfg
    }

    pub fn chain(&self) -> Option<&GilbertElliott> {
        self.chain.as_ref()
    }

    pub fn transit(&mut self, _send_time_ms: f64, transfer_id: u64) -> TransitResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(transfer_id);

        let loss_p = match self.chain.as_mut() {
            Some(ge) => {
                ge.step();
                ge.loss_probability()
            }
            None => self.cfg.loss_rate,
        };
        let lost = rng.random::<f64>() < loss_p;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let corrupted = rng.random::<f64>() < self.cfg.corruption_rate;
        let duplicated = rng.random::<f64>() < self.cfg.duplicate_rate;
        let reordered = rng.random::<f64>() < self.cfg.reorder_rate;

        let mut delay_ms = (self.cfg.base_latency_ms + self.cfg.jitter_ms * noise).max(0.0);
        if reordered {
            delay_ms += self.cfg.jitter_ms;
        }
        TransitResult {
            delivered: !lost,
            corrupted: !lost && corrupted,
            duplicated: !lost && duplicated,
            delay_ms,
            reordered: !lost && reordered,
        }
    }
}
