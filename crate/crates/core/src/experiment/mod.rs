//! Experiment runner: taskgen → env → agent (→ learner plane when remote),
//! with per-step records and a run summary.

pub mod config;
pub mod metrics;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::env::{EnvError, OffloadEnv};
use crate::learner::{ClientRuntime, LearnerError, ServerPlane, TrainingMode};
use crate::taskgen::{generate_taskset, read_taskset, TaskGenError, TaskSpec, TaskStream};

pub use config::{ExperimentConfig, OutputConfig};
pub use metrics::{
    parse_records, summarize, write_records, MetricsRecord, ModeComparison, RunSummary, WireTotals, RECORDS_HEADER,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

impl ExperimentError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

/// Task templates for `cfg`: read from file or generated.
pub fn load_templates(cfg: &ExperimentConfig) -> Result<Vec<TaskSpec>, ExperimentError> {
    match &cfg.taskset_file {
        Some(path) => {
            let f = File::open(path).map_err(|e| ExperimentError::io(path, e))?;
            Ok(read_taskset(BufReader::new(f))?)
        }
        None => Ok(generate_taskset(&cfg.taskgen)?),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    run_experiment_with(cfg, None)
}

/// Runs `cfg`, optionally streaming every broker frame into `capture`.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut capture: Option<&mut dyn Write>,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let templates = load_templates(cfg)?;
    let mut env = OffloadEnv::new(cfg.env.clone(), cfg.netem.clone(), &templates)?;
    let tasks: Vec<TaskSpec> = TaskStream::new(&templates, cfg.mean_interarrival_s, cfg.stream_seed)
        .take(cfg.horizon)
        .collect();

    let mut rt = ClientRuntime::new(cfg.device_id, cfg.agent_kind, cfg.training_mode, &cfg.agent, &cfg.remote)
        .map_err(ExperimentError::Config)?;
    let mut plane = match cfg.training_mode {
        TrainingMode::Remote if !tasks.is_empty() => {
            let mut p = ServerPlane::new(cfg.agent.clone(), &cfg.remote);
            if capture.is_some() {
                p.broker.enable_tap();
            }
            rt.connect(&mut p, 0)?;
            Some(p)
        }
        _ => None,
    };

    let mut records = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let step = rt.step_with(&mut env, plane.as_mut(), task, tasks.get(i + 1), cfg.force_action)?;
        records.push(MetricsRecord::from_step(i as u64, task, &step));
        if let (Some(w), Some(p)) = (capture.as_deref_mut(), plane.as_mut()) {
            for f in p.broker.take_tapped() {
                w.write_all(&f).map_err(|e| ExperimentError::io(Path::new("<capture>"), e))?;
            }
        }
    }
    if let (Some(w), Some(p)) = (capture, plane.as_mut()) {
        for f in p.broker.take_tapped() {
            w.write_all(&f).map_err(|e| ExperimentError::io(Path::new("<capture>"), e))?;
        }
    }

    let summary = summarize(cfg.training_mode, cfg.agent_kind, &records, rt.counters().into());
    Ok(RunOutput { records, summary })
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ExperimentError::io(path, e))
}

pub fn emit_records(records: &[MetricsRecord], path: &Path) -> Result<(), ExperimentError> {
    write_records(create(path)?, records).map_err(|e| ExperimentError::io(path, e))
}

pub fn emit_summary(summary: &RunSummary, path: &Path) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    w.write_all(summary.to_text().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| ExperimentError::io(path, e))
}

/// Runs `cfg` and writes every configured output file.
pub fn run_and_emit(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let out = match &cfg.output.capture {
        Some(path) => {
            let mut w = create(path)?;
            let out = run_experiment_with(cfg, Some(&mut w))?;
            w.flush().map_err(|e| ExperimentError::io(path, e))?;
            out
        }
        None => run_experiment(cfg)?,
    };
    if let Some(p) = &cfg.output.records {
        emit_records(&out.records, p)?;
    }
    if let Some(p) = &cfg.output.summary {
        emit_summary(&out.summary, p)?;
    }
    Ok(out)
}

/// Runs local and remote training on the same workload and seeds.
pub fn compare_modes(cfg: &ExperimentConfig) -> Result<(RunOutput, RunOutput, ModeComparison), ExperimentError> {
    let with_mode = |mode| ExperimentConfig {
        training_mode: mode,
        ..cfg.clone()
    };
    let local = run_experiment(&with_mode(TrainingMode::Local))?;
    let remote = run_experiment(&with_mode(TrainingMode::Remote))?;
    let cmp = ModeComparison {
        local: local.summary.clone(),
        remote: remote.summary.clone(),
    };
    Ok((local, remote, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ModelKind;
    use crate::netem::NetemConfig;

    fn small(mode: TrainingMode) -> ExperimentConfig {
        ExperimentConfig {
            horizon: 40,
            training_mode: mode,
            agent_kind: ModelKind::Dqn,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_horizon_is_empty() {
        for mode in [TrainingMode::Local, TrainingMode::Remote] {
            let out = run_experiment(&ExperimentConfig {
                horizon: 0,
                ..small(mode)
            })
            .unwrap();
            assert!(out.records.is_empty());
            assert_eq!(out.summary, summarize(mode, ModelKind::Dqn, &[], WireTotals::default()));
        }
    }

    #[test]
    fn exactly_horizon_records() {
        let out = run_experiment(&small(TrainingMode::Remote)).unwrap();
        assert_eq!(out.records.len(), 40);
        assert_eq!(out.summary.tasks, 40);
        assert!(out.records.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
    }

    #[test]
    fn forced_failing_cloud_scores_eta_every_step() {
        let mut cfg = small(TrainingMode::Local);
        cfg.force_action = Some(2);
        cfg.netem = NetemConfig {
            loss_rate: 1.0,
            ..NetemConfig::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.cumulative_reward, cfg.horizon as f64 * cfg.env.eta);
        assert!(out.records.iter().all(|r| r.action == 2 && !r.success));
    }

    #[test]
    fn train_cost_shows_up_as_latency_delta() {
        let mut cfg = small(TrainingMode::Local);
        cfg.env.device.train_time_ms = 24.0;
        cfg.env.device.publish_time_ms = 0.0;
        cfg.remote = crate::learner::RemoteConfig::zero_latency();
        let (_, _, cmp) = compare_modes(&cfg).unwrap();
        assert!((cmp.delta_mean_latency_ms() + 24.0).abs() < 1e-9, "{}", cmp.delta_mean_latency_ms());
    }
}
