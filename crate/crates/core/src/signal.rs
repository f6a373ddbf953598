//! Time-indexed background processes: MEC CPU load and link throughput.
//!
//! A signal is a function of simulated time only. Random walks tick on a
//! fixed grid, so the value at time `t` does not depend on how often or
//! from where the signal is advanced.

use std::collections::VecDeque;
use std::io::{self, BufRead};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Constant {
        value: f64,
    },
    /// Piecewise-constant `(time_s, value)` points.
    Trace {
        points: Vec<(f64, f64)>,
    },
    /// A trace file of `time_s value` lines, resolved into `Trace` on load.
    TraceFile {
        path: String,
    },
    /// Reflected random walk with uniform steps in `[-step, step]`.
    RandomWalk {
        start: f64,
        low: f64,
        high: f64,
        step: f64,
        tick_s: f64,
        seed: u64,
    },
}

impl SignalConfig {
    pub fn validate(&self, name: &str) -> Result<(), String> {
        match self {
            SignalConfig::Constant { value } if !value.is_finite() => Err(format!("{name}: value must be finite")),
            SignalConfig::Trace { points } => {
                if points.is_empty() {
                    return Err(format!("{name}: trace is empty"));
                }
                if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    return Err(format!("{name}: trace contains non-finite values"));
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(format!("{name}: trace times must be non-decreasing"));
                }
                Ok(())
            }
            SignalConfig::TraceFile { path } => Err(format!("{name}: trace file {path:?} was not loaded")),
            SignalConfig::RandomWalk {
                start,
                low,
                high,
                step,
                tick_s,
                ..
            } => {
                if !(low <= high && (low..=high).contains(&start)) {
                    return Err(format!("{name}: require low <= start <= high"));
                }
                if !(*step >= 0.0 && step.is_finite()) {
                    return Err(format!("{name}: step must be >= 0"));
                }
                if !(*tick_s > 0.0 && tick_s.is_finite()) {
                    return Err(format!("{name}: tick_s must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Replaces a `TraceFile` with its loaded points, relative to `base`.
    pub fn resolve_files(&mut self, base: &Path) -> io::Result<()> {
        if let SignalConfig::TraceFile { path } = self {
            let full = base.join(&*path);
            let file = std::fs::File::open(&full)?;
            let points = read_trace(io::BufReader::new(file))?;
            *self = SignalConfig::Trace { points };
        }
        Ok(())
    }
}

/// Parses `time_s value` lines; `#` starts a comment.
pub fn read_trace<R: BufRead>(r: R) -> io::Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut it = body.split_whitespace();
        let parse = |s: Option<&str>| -> io::Result<f64> {
            s.and_then(|x| x.parse().ok()).ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, format!("trace line {}: expected `time_s value`", n + 1))
            })
        };
        let t = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("trace line {}: trailing fields", n + 1),
            ));
        }
        points.push((t, v));
    }
    Ok(points)
}

// A handful exist per environment; boxing the RNG buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Process {
    Constant(f64),
    Trace(Vec<(f64, f64)>),
    Walk {
        low: f64,
        high: f64,
        step: f64,
        tick_s: f64,
        ticks: u64,
        current: f64,
        rng: ChaCha8Rng,
    },
}

#[derive(Debug, Clone)]
pub struct Signal {
    process: Process,
    // (time, value) for walk ticks still needed by delayed lookups.
    history: VecDeque<(f64, f64)>,
    retain_s: f64,
    now: f64,
}

pub type SharedSignal = Arc<Mutex<Signal>>;

impl Signal {
    /// `retain_s` bounds how far behind the present `value_at` may look.
    pub fn new(cfg: &SignalConfig, retain_s: f64) -> Result<Self, String> {
        cfg.validate("signal")?;
        let process = match cfg {
            SignalConfig::Constant { value } => Process::Constant(*value),
            SignalConfig::Trace { points } => Process::Trace(points.clone()),
            SignalConfig::TraceFile { .. } => unreachable!("rejected by validate"),
            SignalConfig::RandomWalk {
                start,
                low,
                high,
                step,
                tick_s,
                seed,
            } => Process::Walk {
                low: *low,
                high: *high,
                step: *step,
                tick_s: *tick_s,
                ticks: 0,
                current: *start,
                rng: ChaCha8Rng::seed_from_u64(*seed),
            },
        };
        let mut history = VecDeque::new();
        if let Process::Walk { current, .. } = &process {
            history.push_back((f64::NEG_INFINITY, *current));
        }
        Ok(Self {
            process,
            history,
            retain_s: retain_s.max(0.0),
            now: 0.0,
        })
    }

    pub fn shared(self) -> SharedSignal {
        Arc::new(Mutex::new(self))
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Moves the process forward to time `t` (no-op if `t` is in the past).
    pub fn advance_to(&mut self, t: f64) {
        if t <= self.now {
            return;
        }
        self.now = t;
        if let Process::Walk {
            low,
            high,
            step,
            tick_s,
            ticks,
            current,
            rng,
        } = &mut self.process
        {
            while (*ticks + 1) as f64 * *tick_s <= t {
                *ticks += 1;
                let delta = if *step > 0.0 { rng.random_range(-*step..=*step) } else { 0.0 };
                *current = reflect(*current + delta, *low, *high);
                self.history.push_back((*ticks as f64 * *tick_s, *current));
            }
            let horizon = t - self.retain_s;
            while self.history.len() >= 2 && self.history[1].0 <= horizon {
                self.history.pop_front();
            }
        }
    }

    /// Single tick of a random walk; for other kinds, no-op.
    pub fn tick(&mut self) {
        if let Process::Walk { tick_s, ticks, .. } = &self.process {
            let next = (*ticks + 1) as f64 * *tick_s;
            self.advance_to(next.max(self.now));
        }
    }

    pub fn current(&self) -> f64 {
        self.value_at(self.now)
    }

    /// Value at time `t <= now`.
    pub fn value_at(&self, t: f64) -> f64 {
        match &self.process {
            Process::Constant(v) => *v,
            Process::Trace(points) => trace_lookup(points, t),
            Process::Walk { .. } => {
                let idx = self.history.partition_point(|(ht, _)| *ht <= t);
                self.history[idx.saturating_sub(1)].1
            }
        }
    }
}

fn trace_lookup(points: &[(f64, f64)], t: f64) -> f64 {
    let idx = points.partition_point(|(pt, _)| *pt <= t);
    points[idx.saturating_sub(1)].1
}

fn reflect(v: f64, low: f64, high: f64) -> f64 {
    let r = if v > high {
        2.0 * high - v
    } else if v < low {
        2.0 * low - v
    } else {
        v
    };
    r.clamp(low, high)
}
