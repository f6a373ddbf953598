use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, ModelKind, NUM_ACTIONS};
use crate::env::EnvConfig;
use crate::experiment::ExperimentError;
use crate::learner::{RemoteConfig, TrainingMode};
use crate::netem::NetemConfig;
use crate::taskgen::TaskSetConfig;

/// Where results go. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub records: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Every frame published on the broker, in `wire-dump` format.
    pub capture: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            records: Some("records.csv".into()),
            summary: Some("summary.txt".into()),
            capture: None,
        }
    }
}

/// One experiment. Every random source has an explicit seed in here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of tasks (decisions) in the run.
    pub horizon: usize,
    pub training_mode: TrainingMode,
    pub agent_kind: ModelKind,
    pub device_id: u32,
    pub mean_interarrival_s: f64,
    pub stream_seed: u64,
    /// Load the task templates from this file instead of generating them.
    pub taskset_file: Option<PathBuf>,
    /// Debug: override every action (the agent still samples).
    pub force_action: Option<u8>,
    pub taskgen: TaskSetConfig,
    pub env: EnvConfig,
    /// Impairments on the base-station to cloud path.
    pub netem: NetemConfig,
    pub agent: AgentConfig,
    pub remote: RemoteConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            training_mode: TrainingMode::Local,
            agent_kind: ModelKind::Ac,
            device_id: 1,
            mean_interarrival_s: 0.05,
            stream_seed: 7,
            taskset_file: None,
            force_action: None,
            taskgen: TaskSetConfig::default(),
            env: EnvConfig::default(),
            netem: NetemConfig {
                base_latency_ms: 20.0,
                jitter_ms: 4.0,
                loss_rate: 0.01,
                seed: 104,
                ..NetemConfig::default()
            },
            agent: AgentConfig::default(),
            remote: RemoteConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> Result<(), ExperimentError> {
        for (name, sig) in [("env.mec_load", &mut self.env.mec_load), ("env.throughput_mbps", &mut self.env.throughput_mbps)] {
            sig.resolve_files(base)
                .map_err(|e| ExperimentError::Config(format!("{name}: {e}")))?;
        }
        let join = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        join(&mut self.taskset_file);
        join(&mut self.output.records);
        join(&mut self.output.summary);
        join(&mut self.output.capture);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg_err = |m: String| Err(ExperimentError::Config(m));
        if !(self.mean_interarrival_s > 0.0 && self.mean_interarrival_s.is_finite()) {
            return cfg_err("mean_interarrival_s: must be positive".into());
        }
        if let Some(a) = self.force_action {
            if a as usize >= NUM_ACTIONS {
                return cfg_err(format!("force_action: {a} is not one of 0, 1, 2"));
            }
        }
        let a = &self.agent;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return cfg_err("agent.learning_rate: must be positive".into());
        }
        if !(0.0..=1.0).contains(&a.gamma) {
            return cfg_err("agent.gamma: must be in [0, 1]".into());
        }
        if !((0.0..=1.0).contains(&a.epsilon_start)
            && (0.0..=1.0).contains(&a.epsilon_min)
            && (0.0..=1.0).contains(&a.epsilon_decay))
        {
            return cfg_err("agent.epsilon_*: must be in [0, 1]".into());
        }
        if self.taskset_file.is_none() {
            self.taskgen
                .validate()
                .map_err(|e| ExperimentError::Config(format!("taskgen: {e}")))?;
        }
        self.env
            .validate()
            .map_err(|e| ExperimentError::Config(format!("env: {e}")))?;
        self.netem
            .validate()
            .map_err(|e| ExperimentError::Config(format!("netem: {e}")))?;
        self.remote.validate().map_err(ExperimentError::Config)?;
        Ok(())
    }
}
