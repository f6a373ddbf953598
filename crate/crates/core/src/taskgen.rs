//! Synthetic task sets and arrival streams.
//!
//! Per-task utilizations come from UUniFast-Discard, periods from a uniform
//! grid, and the compute demand is the WCET converted to megacycles at the
//! target CPU speed. Each task's deadline is `C / beta` milliseconds with
//! `beta ~ U(beta_low, beta_high)`.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_DISCARD_ROUNDS: usize = 100_000;

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("invalid taskset config: {0}")]
    InvalidConfig(String),
    #[error("total utilization {total} is infeasible on {cores} cores")]
    InfeasibleUtilization { total: f64, cores: u32 },
    #[error("UUniFast-Discard gave up after {0} rounds")]
    DiscardExhausted(usize),
    #[error("taskset file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSetConfig {
    pub total_utilization: f64,
    pub n_tasks: usize,
    /// Microseconds.
    pub min_period: u64,
    pub max_period: u64,
    pub period_step: u64,
    pub seed: u64,
    pub cpu_speed_mhz: f64,
    pub cores: u32,
    pub beta_low: f64,
    pub beta_high: f64,
    pub payload_bytes_per_megacycle: f64,
}

impl Default for TaskSetConfig {
    fn default() -> Self {
        Self {
            total_utilization: 3.9,
            n_tasks: 500,
            min_period: 100_000,
            max_period: 100_000_000,
            period_step: 1000,
            seed: 50,
            cpu_speed_mhz: 1200.048,
            cores: 4,
            beta_low: 9.0,
            beta_high: 11.0,
            payload_bytes_per_megacycle: 2048.0,
        }
    }
}

impl TaskSetConfig {
    pub fn validate(&self) -> Result<(), TaskGenError> {
        let bad = |m: &str| Err(TaskGenError::InvalidConfig(m.to_string()));
        if self.n_tasks == 0 {
            return bad("n_tasks must be positive");
        }
        if self.min_period == 0 || self.min_period > self.max_period {
            return bad("require 0 < min_period <= max_period");
        }
        if self.period_step == 0 {
            return bad("period_step must be positive");
        }
        if !(self.beta_low > 0.0 && self.beta_low < self.beta_high && self.beta_high.is_finite()) {
            return bad("require 0 < beta_low < beta_high");
        }
        if !(self.cpu_speed_mhz > 0.0 && self.cpu_speed_mhz.is_finite()) {
            return bad("cpu_speed_mhz must be positive");
        }
        if !(self.payload_bytes_per_megacycle > 0.0 && self.payload_bytes_per_megacycle.is_finite()) {
            return bad("payload_bytes_per_megacycle must be positive");
        }
        if !(self.total_utilization > 0.0 && self.total_utilization.is_finite()) {
            return bad("total_utilization must be positive");
        }
        if self.total_utilization > self.cores as f64 || self.total_utilization > self.n_tasks as f64 {
            return Err(TaskGenError::InfeasibleUtilization {
                total: self.total_utilization,
                cores: self.cores,
            });
        }
        Ok(())
    }
}

/// One task template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub compute_megacycles: f64,
    /// Microseconds.
    pub period_us: u64,
    pub deadline_ms: f64,
    pub payload_bytes: u64,
    /// Simulated seconds; zero for templates, set by [`TaskStream`].
    pub arrival_time: f64,
}

impl TaskSpec {
    pub fn utilization(&self, cpu_speed_mhz: f64) -> f64 {
        self.compute_megacycles / cpu_speed_mhz / (self.period_us as f64 / 1e6)
    }
}

/// UUniFast over `n` tasks, redrawing whenever a share exceeds 1.
pub fn uunifast_discard<R: Rng>(rng: &mut R, total: f64, n: usize) -> Result<Vec<f64>, TaskGenError> {
    for _ in 0..MAX_DISCARD_ROUNDS {
        let mut shares = Vec::with_capacity(n);
        let mut remaining = total;
        for i in 1..n {
            let next = remaining * rng.random::<f64>().powf(1.0 / (n - i) as f64);
            shares.push(remaining - next);
            remaining = next;
        }
        shares.push(remaining);
        if shares.iter().all(|u| *u <= 1.0) {
            return Ok(shares);
        }
    }
    Err(TaskGenError::DiscardExhausted(MAX_DISCARD_ROUNDS))
}

pub fn generate_taskset(cfg: &TaskSetConfig) -> Result<Vec<TaskSpec>, TaskGenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shares = uunifast_discard(&mut rng, cfg.total_utilization, cfg.n_tasks)?;
    let grid = (cfg.max_period - cfg.min_period) / cfg.period_step;
    let tasks = shares
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let period_us = cfg.min_period + rng.random_range(0..=grid) * cfg.period_step;
            let wcet_s = u * period_us as f64 / 1e6;
            let compute_megacycles = wcet_s * cfg.cpu_speed_mhz;
            let beta = rng.random_range(cfg.beta_low..cfg.beta_high);
            let payload_bytes = ((compute_megacycles * cfg.payload_bytes_per_megacycle).ceil() as u64).max(1);
            TaskSpec {
                task_id: i as u32,
                compute_megacycles,
                period_us,
                deadline_ms: compute_megacycles / beta,
                payload_bytes,
                arrival_time: 0.0,
            }
        })
        .collect();
    Ok(tasks)
}

/// Endless Poisson arrival process drawing task templates uniformly.
#[derive(Debug, Clone)]
pub struct TaskStream<'a> {
    tasks: &'a [TaskSpec],
    mean_interarrival_s: f64,
    clock: f64,
    rng: ChaCha8Rng,
}

impl<'a> TaskStream<'a> {
    pub fn new(tasks: &'a [TaskSpec], mean_interarrival_s: f64, seed: u64) -> Self {
        Self {
            tasks,
            mean_interarrival_s,
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for TaskStream<'_> {
    type Item = TaskSpec;

    fn next(&mut self) -> Option<TaskSpec> {
        if self.tasks.is_empty() || !(self.mean_interarrival_s > 0.0) {
            return None;
        }
        loop {
            let gap: f64 = Exp1.sample(&mut self.rng);
            let next = self.clock + gap * self.mean_interarrival_s;
            if next > self.clock {
                self.clock = next;
                break;
            }
        }
        let pick = self.rng.random_range(0..self.tasks.len());
        Some(TaskSpec {
            arrival_time: self.clock,
            ..self.tasks[pick].clone()
        })
    }
}

/// All arrivals strictly before `horizon_s`.
pub fn task_stream(tasks: &[TaskSpec], horizon_s: f64, mean_interarrival_s: f64, seed: u64) -> Vec<TaskSpec> {
    if !(horizon_s > 0.0) {
        return Vec::new();
    }
    TaskStream::new(tasks, mean_interarrival_s, seed)
        .take_while(|t| t.arrival_time < horizon_s)
        .collect()
}

pub const TASKSET_HEADER: &str = "# id,compute_megacycles,period_us,deadline_ms,payload_bytes,arrival_s";

pub fn write_taskset<W: Write>(mut w: W, tasks: &[TaskSpec]) -> io::Result<()> {
    writeln!(w, "{TASKSET_HEADER}")?;
    for t in tasks {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.task_id, t.compute_megacycles, t.period_us, t.deadline_ms, t.payload_bytes, t.arrival_time
        )?;
    }
    Ok(())
}

pub fn read_taskset<R: BufRead>(r: R) -> Result<Vec<TaskSpec>, TaskGenError> {
    let mut tasks = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| TaskGenError::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let f64_at = |i: usize| fields[i].parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
        let task = TaskSpec {
            task_id: fields[0].parse().map_err(|e| err(format!("field 1: {e}")))?,
            compute_megacycles: f64_at(1)?,
            period_us: fields[2].parse().map_err(|e| err(format!("field 3: {e}")))?,
            deadline_ms: f64_at(3)?,
            payload_bytes: fields[4].parse().map_err(|e| err(format!("field 5: {e}")))?,
            arrival_time: f64_at(5)?,
        };
        if !(task.compute_megacycles > 0.0 && task.deadline_ms > 0.0 && task.payload_bytes > 0) {
            return Err(err("compute, deadline and payload must be positive".into()));
        }
        tasks.push(task);
    }
    Ok(tasks)
}
