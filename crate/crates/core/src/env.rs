//! The offloading MDP: observes the 5-feature state for an incoming task,
//! runs the chosen placement through a latency/energy model, and scores it.
//!
//! Reward is `-energy / energy_norm` when the task meets its deadline and
//! the penalty `eta` otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::StateVector;
use crate::netem::{NetemConfig, NetemLink};
use crate::signal::{SharedSignal, Signal, SignalConfig};
use crate::taskgen::TaskSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {0} violates the placement constraint (must be 0, 1 or 2)")]
    InvalidAction(u8),
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Local,
    Mec,
    Cloud,
}

impl Placement {
    pub fn from_action(action: u8) -> Result<Self, EnvError> {
        match action {
            0 => Ok(Placement::Local),
            1 => Ok(Placement::Mec),
            2 => Ok(Placement::Cloud),
            a => Err(EnvError::InvalidAction(a)),
        }
    }

    pub fn action(self) -> u8 {
        self as u8
    }
}

/// Raw observation, in the order it is fed to the agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedState {
    pub r_ue: f64,
    pub r_mec: f64,
    pub throughput_mbps: f64,
    pub compute_megacycles: f64,
    pub deadline_ms: f64,
}

/// Power and timing coefficients for one class of device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceProfile {
    pub cpu_mhz: f64,
    pub power_compute_w: f64,
    pub power_tx_w: f64,
    pub power_idle_w: f64,
    pub decision_time_ms: f64,
    /// Cost of one on-device training step.
    pub train_time_ms: f64,
    pub train_energy_j: f64,
    /// Cost of encoding and publishing one experience.
    pub publish_time_ms: f64,
    pub publish_energy_j: f64,
    /// Fraction of the device's CPU a running local task occupies.
    pub local_task_share: f64,
}

impl DeviceProfile {
    /// Quad-core single-board computer at the taskset's reference clock.
    pub fn sbc() -> Self {
        Self {
            cpu_mhz: 1200.048,
            power_compute_w: 5.1,
            power_tx_w: 3.2,
            power_idle_w: 2.7,
            decision_time_ms: 2.0,
            train_time_ms: 24.0,
            train_energy_j: 0.11,
            publish_time_ms: 0.4,
            publish_energy_j: 0.0015,
            local_task_share: 0.25,
        }
    }

    /// Larger embedded module with a faster CPU and a hungrier power envelope.
    pub fn embedded_gpu() -> Self {
        Self {
            cpu_mhz: 2200.0,
            power_compute_w: 14.0,
            power_tx_w: 3.2,
            power_idle_w: 6.5,
            decision_time_ms: 0.8,
            train_time_ms: 9.0,
            train_energy_j: 0.13,
            publish_time_ms: 0.2,
            publish_energy_j: 0.0013,
            local_task_share: 1.0 / 12.0,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let pos = [
            ("cpu_mhz", self.cpu_mhz),
            ("power_compute_w", self.power_compute_w),
            ("power_tx_w", self.power_tx_w),
            ("power_idle_w", self.power_idle_w),
            ("decision_time_ms", self.decision_time_ms),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("device.{name} must be positive")));
            }
        }
        let non_neg = [
            ("train_time_ms", self.train_time_ms),
            ("train_energy_j", self.train_energy_j),
            ("publish_time_ms", self.publish_time_ms),
            ("publish_energy_j", self.publish_energy_j),
        ];
        for (name, v) in non_neg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("device.{name} must be >= 0")));
            }
        }
        if !(self.local_task_share > 0.0 && self.local_task_share <= 1.0) {
            return Err(EnvError::Config("device.local_task_share must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn max_power_w(&self) -> f64 {
        self.power_compute_w.max(self.power_tx_w).max(self.power_idle_w)
    }
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self::sbc()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub device: DeviceProfile,
    pub mec_cpu_mhz: f64,
    pub cloud_cpu_mhz: f64,
    /// Failure penalty; must be negative.
    pub eta: f64,
    pub result_payload_bytes: u64,
    pub throughput_max_mbps: f64,
    /// `None` uses the largest value in the taskset.
    pub compute_max_megacycles: Option<f64>,
    pub deadline_max_ms: Option<f64>,
    pub r_floor: f64,
    pub mec_query_delay_ms: f64,
    /// `None` uses the worst local-execution energy over the taskset.
    pub energy_norm_j: Option<f64>,
    pub cloud_retries: u32,
    /// MEC CPU load in `[0, 1]`; availability is its complement.
    pub mec_load: SignalConfig,
    pub throughput_mbps: SignalConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            device: DeviceProfile::sbc(),
            mec_cpu_mhz: 32_000.0,
            cloud_cpu_mhz: 64_000.0,
            eta: -1.0,
            result_payload_bytes: 1024,
            throughput_max_mbps: 1000.0,
            compute_max_megacycles: None,
            deadline_max_ms: None,
            r_floor: 0.05,
            mec_query_delay_ms: 0.0,
            energy_norm_j: None,
            cloud_retries: 1,
            mec_load: SignalConfig::RandomWalk {
                start: 0.3,
                low: 0.0,
                high: 0.95,
                step: 0.05,
                tick_s: 1.0,
                seed: 101,
            },
            throughput_mbps: SignalConfig::RandomWalk {
                start: 500.0,
                low: 50.0,
                high: 900.0,
                step: 40.0,
                tick_s: 1.0,
                seed: 102,
            },
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.device.validate()?;
        let err = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.mec_cpu_mhz > 0.0 && self.cloud_cpu_mhz > 0.0) {
            return err("server cpu speeds must be positive");
        }
        if !(self.eta < 0.0 && self.eta.is_finite()) {
            return err("eta must be a finite negative number");
        }
        if !(self.r_floor > 0.0 && self.r_floor <= 1.0) {
            return err("r_floor must be in (0, 1]");
        }
        if !(self.throughput_max_mbps > 0.0) {
            return err("throughput_max_mbps must be positive");
        }
        if self.compute_max_megacycles.is_some_and(|v| !(v > 0.0)) || self.deadline_max_ms.is_some_and(|v| !(v > 0.0)) {
            return err("normalization bounds must be positive");
        }
        if self.energy_norm_j.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return err("energy_norm_j must be positive");
        }
        if !(self.mec_query_delay_ms >= 0.0) {
            return err("mec_query_delay_ms must be >= 0");
        }
        self.mec_load.validate("mec_load").map_err(EnvError::Config)?;
        self.throughput_mbps.validate("throughput_mbps").map_err(EnvError::Config)?;
        Ok(())
    }
}

/// Scale factors fixed once per taskset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub throughput_max_mbps: f64,
    pub compute_max_megacycles: f64,
    pub deadline_max_ms: f64,
    pub energy_norm_j: f64,
}

impl Normalization {
    pub fn resolve(cfg: &EnvConfig, tasks: &[TaskSpec]) -> Result<Self, EnvError> {
        let max_of = |f: fn(&TaskSpec) -> f64| tasks.iter().map(f).fold(0.0, f64::max);
        let compute_max = cfg.compute_max_megacycles.unwrap_or_else(|| max_of(|t| t.compute_megacycles));
        let deadline_max = cfg.deadline_max_ms.unwrap_or_else(|| max_of(|t| t.deadline_ms));
        if !(compute_max > 0.0 && deadline_max > 0.0) {
            return Err(EnvError::Config(
                "cannot derive normalization bounds from an empty taskset".into(),
            ));
        }
        let dev = &cfg.device;
        let worst_local =
            dev.power_compute_w * compute_max / dev.cpu_mhz + dev.power_idle_w * dev.decision_time_ms / 1000.0;
        let energy_norm_j = cfg.energy_norm_j.unwrap_or(worst_local);

        // A successful task spends at most its deadline in any phase, so its
        // energy is bounded by peak power times the largest deadline.
        let task_deadline_max = max_of(|t| t.deadline_ms).max(deadline_max);
        let worst_success = dev.max_power_w() * task_deadline_max / 1000.0 / energy_norm_j;
        if cfg.eta > -worst_success {
            return Err(EnvError::Config(format!(
                "eta = {} does not dominate the worst successful reward -{worst_success}",
                cfg.eta
            )));
        }
        Ok(Self {
            throughput_max_mbps: cfg.throughput_max_mbps,
            compute_max_megacycles: compute_max,
            deadline_max_ms: deadline_max,
            energy_norm_j,
        })
    }
}

pub fn normalize_state(s: &ObservedState, n: &Normalization) -> StateVector {
    [
        s.r_ue.clamp(0.0, 1.0) as f32,
        s.r_mec.clamp(0.0, 1.0) as f32,
        (s.throughput_mbps / n.throughput_max_mbps).clamp(0.0, 1.0) as f32,
        (s.compute_megacycles / n.compute_max_megacycles).clamp(0.0, 1.0) as f32,
        (s.deadline_ms / n.deadline_max_ms).clamp(0.0, 1.0) as f32,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub decision_ms: f64,
    pub uplink_ms: f64,
    pub processing_ms: f64,
    pub downlink_ms: f64,
    pub total_ms: f64,
}

/// Result of running a task somewhere, before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub latency: LatencyBreakdown,
    pub energy_j: f64,
    /// False when the payload or result could not be transferred.
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub action: u8,
    pub state: ObservedState,
    pub latency: LatencyBreakdown,
    pub energy_j: f64,
    pub energy_norm: f64,
    pub delivered: bool,
    pub success: bool,
    pub reward: f64,
    pub next_state: ObservedState,
}

#[derive(Debug, Clone, Copy)]
struct LocalJob {
    start_s: f64,
    end_s: f64,
    share: f64,
}

pub struct OffloadEnv {
    cfg: EnvConfig,
    norm: Normalization,
    mec_load: SharedSignal,
    throughput: Signal,
    netem: NetemLink,
    jobs: Vec<LocalJob>,
    now_s: f64,
    transfers: u64,
}

impl OffloadEnv {
    /// `tasks` is the taskset the environment will serve, used to resolve
    /// default normalization bounds.
    pub fn new(cfg: EnvConfig, netem: NetemConfig, tasks: &[TaskSpec]) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mec = Signal::new(&cfg.mec_load, cfg.mec_query_delay_ms / 1000.0)
            .map_err(EnvError::Config)?
            .shared();
        Self::with_shared_mec(cfg, netem, tasks, mec)
    }

    /// Like [`OffloadEnv::new`] but sharing a MEC load process with other environments.
    pub fn with_shared_mec(
        cfg: EnvConfig,
        netem: NetemConfig,
        tasks: &[TaskSpec],
        mec_load: SharedSignal,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        let norm = Normalization::resolve(&cfg, tasks)?;
        let throughput = Signal::new(&cfg.throughput_mbps, 0.0).map_err(EnvError::Config)?;
        let netem = NetemLink::new(netem).map_err(|e| EnvError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            norm,
            mec_load,
            throughput,
            netem,
            jobs: Vec::new(),
            now_s: 0.0,
            transfers: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    pub fn normalize(&self, s: &ObservedState) -> StateVector {
        normalize_state(s, &self.norm)
    }

    /// Moves background processes to `t` and retires finished local jobs.
    pub fn advance_background(&mut self, t: f64) {
        if t > self.now_s {
            self.now_s = t;
        }
        let now = self.now_s;
        self.mec_load.lock().expect("mec load lock").advance_to(now);
        self.throughput.advance_to(now);
        self.jobs.retain(|j| j.end_s > now);
    }

    fn r_ue_at(&self, t: f64) -> f64 {
        let busy: f64 = self
            .jobs
            .iter()
            .filter(|j| j.start_s <= t && t < j.end_s)
            .map(|j| j.share)
            .sum();
        (1.0 - busy).clamp(0.0, 1.0)
    }

    fn mec_availability_at(&self, t: f64) -> f64 {
        let load = self.mec_load.lock().expect("mec load lock").value_at(t);
        (1.0 - load).clamp(0.0, 1.0)
    }

    fn throughput_now(&self) -> f64 {
        self.throughput.current().max(0.0)
    }

    /// Snapshot of the state seen when `task` arrives.
    pub fn observe(&mut self, task: &TaskSpec) -> ObservedState {
        self.advance_background(task.arrival_time);
        let query_t = self.now_s - self.cfg.mec_query_delay_ms / 1000.0;
        ObservedState {
            r_ue: self.r_ue_at(self.now_s),
            r_mec: self.mec_availability_at(query_t),
            throughput_mbps: self.throughput_now(),
            compute_megacycles: task.compute_megacycles,
            deadline_ms: task.deadline_ms,
        }
    }

    fn decision_s(&self) -> f64 {
        self.cfg.device.decision_time_ms / 1000.0
    }

    pub fn execute_local(&self, task: &TaskSpec) -> Execution {
        let dev = &self.cfg.device;
        let avail = self.r_ue_at(self.now_s).max(self.cfg.r_floor);
        let processing_ms = task.compute_megacycles / (dev.cpu_mhz * avail) * 1000.0;
        let energy_j = dev.power_compute_w * processing_ms / 1000.0 + dev.power_idle_w * self.decision_s();
        Execution {
            latency: LatencyBreakdown {
                processing_ms,
                ..LatencyBreakdown::default()
            },
            energy_j,
            delivered: true,
        }
    }

    fn undeliverable(&self) -> Execution {
        Execution {
            latency: LatencyBreakdown::default(),
            energy_j: self.cfg.device.power_idle_w * self.decision_s(),
            delivered: false,
        }
    }

    pub fn execute_mec(&self, task: &TaskSpec) -> Execution {
        let tput = self.throughput_now();
        if !(tput > 0.0) {
            return self.undeliverable();
        }
        let dev = &self.cfg.device;
        let uplink_ms = transfer_ms(task.payload_bytes, tput);
        let downlink_ms = transfer_ms(self.cfg.result_payload_bytes, tput);
        let avail = self.mec_availability_at(self.now_s).max(self.cfg.r_floor);
        let processing_ms = task.compute_megacycles / (self.cfg.mec_cpu_mhz * avail) * 1000.0;
        let energy_j = dev.power_tx_w * uplink_ms / 1000.0
            + dev.power_idle_w * ((processing_ms + downlink_ms) / 1000.0 + self.decision_s());
        Execution {
            latency: LatencyBreakdown {
                uplink_ms,
                processing_ms,
                downlink_ms,
                ..LatencyBreakdown::default()
            },
            energy_j,
            delivered: true,
        }
    }

    pub fn execute_cloud(&mut self, task: &TaskSpec) -> Execution {
        let tput = self.throughput_now();
        if !(tput > 0.0) {
            return self.undeliverable();
        }
        let dev = self.cfg.device.clone();
        let send_ms = self.now_s * 1000.0;
        let up_radio = transfer_ms(task.payload_bytes, tput);
        let (up_ok, up_attempts, up_wait) = self.transfer_with_retries(send_ms);
        let uplink_ms = up_radio * up_attempts as f64 + up_wait;
        let tx_ms = up_radio * up_attempts as f64;
        let (mut processing_ms, mut downlink_ms, mut delivered) = (0.0, 0.0, false);
        if up_ok {
            processing_ms = task.compute_megacycles / self.cfg.cloud_cpu_mhz * 1000.0;
            let down_radio = transfer_ms(self.cfg.result_payload_bytes, tput);
            let (down_ok, down_attempts, down_wait) =
                self.transfer_with_retries(send_ms + uplink_ms + processing_ms);
            downlink_ms = down_radio * down_attempts as f64 + down_wait;
            delivered = down_ok;
        }
        let idle_ms = uplink_ms - tx_ms + processing_ms + downlink_ms;
        let energy_j =
            dev.power_tx_w * tx_ms / 1000.0 + dev.power_idle_w * (idle_ms / 1000.0 + self.decision_s());
        Execution {
            latency: LatencyBreakdown {
                uplink_ms,
                processing_ms,
                downlink_ms,
                ..LatencyBreakdown::default()
            },
            energy_j,
            delivered,
        }
    }

    /// Returns `(delivered, attempts, impairment_ms)`. A lost or corrupted
    /// attempt costs the base latency before the retry.
    fn transfer_with_retries(&mut self, send_ms: f64) -> (bool, u32, f64) {
        let mut waited = 0.0;
        for attempt in 1..=self.cfg.cloud_retries + 1 {
            let r = self.netem.transit(send_ms + waited, self.transfers);
            self.transfers += 1;
            if r.delivered && !r.corrupted {
                return (true, attempt, waited + r.delay_ms);
            }
            waited += self.netem.config().base_latency_ms;
        }
        (false, self.cfg.cloud_retries + 1, waited)
    }

    /// Executes `action` for `task`, scores it, and observes `next_task`
    /// (or re-observes `task` when there is none).
    pub fn step(&mut self, task: &TaskSpec, action: u8, next_task: Option<&TaskSpec>) -> Result<StepOutcome, EnvError> {
        let placement = Placement::from_action(action)?;
        let state = self.observe(task);
        let exec = match placement {
            Placement::Local => self.execute_local(task),
            Placement::Mec => self.execute_mec(task),
            Placement::Cloud => self.execute_cloud(task),
        };
        let mut latency = exec.latency;
        latency.decision_ms = self.cfg.device.decision_time_ms;
        latency.total_ms = latency.decision_ms + latency.uplink_ms + latency.processing_ms + latency.downlink_ms;

        if placement == Placement::Local {
            let start_s = self.now_s + latency.decision_ms / 1000.0;
            self.jobs.push(LocalJob {
                start_s,
                end_s: start_s + latency.processing_ms / 1000.0,
                share: self.cfg.device.local_task_share,
            });
        }

        let success = exec.delivered && latency.total_ms <= task.deadline_ms;
        let energy_norm = exec.energy_j / self.norm.energy_norm_j;
        let reward = if success { -energy_norm } else { self.cfg.eta };

        let next_state = match next_task {
            Some(next) => self.observe(next),
            None => state,
        };
        Ok(StepOutcome {
            action,
            state,
            latency,
            energy_j: exec.energy_j,
            energy_norm,
            delivered: exec.delivered,
            success,
            reward,
            next_state,
        })
    }
}

/// Milliseconds to move `bytes` at `mbps`.
pub fn transfer_ms(bytes: u64, mbps: f64) -> f64 {
    bytes as f64 * 8.0 / (mbps * 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(c: f64, deadline: f64, payload: u64, at: f64) -> TaskSpec {
        TaskSpec {
            task_id: 0,
            compute_megacycles: c,
            period_us: 100_000,
            deadline_ms: deadline,
            payload_bytes: payload,
            arrival_time: at,
        }
    }

    fn static_cfg(mec_load: f64, tput: f64) -> EnvConfig {
        EnvConfig {
            device: DeviceProfile {
                cpu_mhz: 1200.0,
                ..DeviceProfile::sbc()
            },
            mec_load: SignalConfig::Constant { value: mec_load },
            throughput_mbps: SignalConfig::Constant { value: tput },
            compute_max_megacycles: Some(1000.0),
            deadline_max_ms: Some(1000.0),
            energy_norm_j: Some(10.0),
            ..EnvConfig::default()
        }
    }

    fn env(cfg: EnvConfig) -> OffloadEnv {
        let tasks = [task(1000.0, 1000.0, 1000, 0.0)];
        OffloadEnv::new(cfg, NetemConfig::default(), &tasks).unwrap()
    }

    #[test]
    fn idle_observation() {
        let mut e = env(static_cfg(0.0, 100.0));
        let s = e.observe(&task(10.0, 5.0, 100, 1.0));
        assert_eq!((s.r_ue, s.r_mec, s.throughput_mbps), (1.0, 1.0, 100.0));
        assert_eq!((s.compute_megacycles, s.deadline_ms), (10.0, 5.0));
    }

    #[test]
    fn mec_availability_is_load_complement() {
        let mut e = env(static_cfg(0.75, 100.0));
        assert_eq!(e.observe(&task(10.0, 5.0, 100, 0.0)).r_mec, 0.25);
    }

    #[test]
    fn delayed_mec_query_sees_the_past() {
        let points: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, i as f64 / 100.0)).collect();
        let cfg = EnvConfig {
            mec_load: SignalConfig::Trace { points: points.clone() },
            mec_query_delay_ms: 2000.0,
            ..static_cfg(0.0, 100.0)
        };
        let mut e = env(cfg);
        for t in [5.0, 17.5, 40.0] {
            let s = e.observe(&task(10.0, 5.0, 100, t));
            let oracle = points.iter().rev().find(|(pt, _)| *pt <= t - 2.0).unwrap().1;
            assert_eq!(s.r_mec, 1.0 - oracle);
        }
    }

    #[test]
    fn normalize_bounds() {
        let n = Normalization {
            throughput_max_mbps: 200.0,
            compute_max_megacycles: 50.0,
            deadline_max_ms: 10.0,
            energy_norm_j: 1.0,
        };
        let full = ObservedState {
            r_ue: 1.0,
            r_mec: 1.0,
            throughput_mbps: 200.0,
            compute_megacycles: 50.0,
            deadline_ms: 10.0,
        };
        assert_eq!(normalize_state(&full, &n), [1.0; 5]);
        let half = ObservedState {
            r_ue: 0.3,
            r_mec: 0.6,
            throughput_mbps: 100.0,
            compute_megacycles: 500.0,
            deadline_ms: 1.0,
        };
        assert_eq!(normalize_state(&half, &n), [0.3, 0.6, 0.5, 1.0, 0.1]);
    }

    #[test]
    fn local_processing_time() {
        let mut e = env(static_cfg(0.0, 100.0));
        let t = task(600.0, 1000.0, 100, 0.0);
        e.observe(&t);
        let x = e.execute_local(&t);
        assert!((x.latency.processing_ms - 500.0).abs() < 1e-9);
        let t2 = task(1200.0, 1000.0, 100, 0.0);
        let y = e.execute_local(&t2);
        assert!((y.latency.processing_ms - 2.0 * x.latency.processing_ms).abs() < 1e-9);
        let idle = e.config().device.power_idle_w * e.decision_s();
        assert!(((y.energy_j - idle) - 2.0 * (x.energy_j - idle)).abs() < 1e-12);
    }

    #[test]
    fn local_floor_applies_when_saturated() {
        let cfg = EnvConfig {
            device: DeviceProfile {
                cpu_mhz: 1200.0,
                local_task_share: 1.0,
                ..DeviceProfile::sbc()
            },
            ..static_cfg(0.0, 100.0)
        };
        let mut e = env(cfg);
        let long = task(12_000.0, 1e9, 100, 0.0);
        e.step(&long, 0, None).unwrap();
        let t = task(60.0, 1e9, 100, 1.0);
        assert_eq!(e.observe(&t).r_ue, 0.0);
        let x = e.execute_local(&t);
        assert!((x.latency.processing_ms - 60.0 / (1200.0 * 0.05) * 1000.0).abs() < 1e-9);
    }

    #[test]
    fn mec_uplink_and_speed_ratio() {
        let cfg = EnvConfig {
            mec_cpu_mhz: 2400.0,
            ..static_cfg(0.0, 100.0)
        };
        let mut e = env(cfg);
        let t = task(600.0, 1e6, 1_250_000, 0.0);
        e.observe(&t);
        let mec = e.execute_mec(&t);
        assert!((mec.latency.uplink_ms - 100.0).abs() < 1e-9);
        let local = e.execute_local(&t);
        assert!((mec.latency.processing_ms * 2.0 - local.latency.processing_ms).abs() < 1e-9);
    }

    #[test]
    fn zero_throughput_fails() {
        let mut e = env(static_cfg(0.0, 0.0));
        let out = e.step(&task(10.0, 1e9, 100, 0.0), 1, None).unwrap();
        assert!(!out.success && !out.delivered);
        assert_eq!(out.reward, -1.0);
        let out = e.step(&task(10.0, 1e9, 100, 0.0), 2, None).unwrap();
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn cloud_netem_passthrough_and_latency() {
        let tasks = [task(1000.0, 1000.0, 1000, 0.0)];
        let t = task(600.0, 1e6, 50_000, 0.0);

        let mut plain = OffloadEnv::new(static_cfg(0.0, 100.0), NetemConfig::default(), &tasks).unwrap();
        plain.observe(&t);
        let cloud = plain.execute_cloud(&t);
        let cfg = EnvConfig {
            mec_cpu_mhz: static_cfg(0.0, 100.0).cloud_cpu_mhz,
            ..static_cfg(0.0, 100.0)
        };
        let mut as_mec = OffloadEnv::new(cfg, NetemConfig::default(), &tasks).unwrap();
        as_mec.observe(&t);
        let mec = as_mec.execute_mec(&t);
        assert_eq!(cloud.latency, mec.latency);
        assert!((cloud.energy_j - mec.energy_j).abs() < 1e-12);

        let delayed = NetemConfig {
            base_latency_ms: 50.0,
            ..NetemConfig::default()
        };
        let mut slow = OffloadEnv::new(static_cfg(0.0, 100.0), delayed, &tasks).unwrap();
        slow.observe(&t);
        let c2 = slow.execute_cloud(&t);
        let total = |l: &LatencyBreakdown| l.uplink_ms + l.processing_ms + l.downlink_ms;
        assert!((total(&c2.latency) - total(&cloud.latency) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn cloud_total_loss_always_fails() {
        let tasks = [task(1000.0, 1000.0, 1000, 0.0)];
        let lossy = NetemConfig {
            loss_rate: 1.0,
            ..NetemConfig::default()
        };
        let mut e = OffloadEnv::new(static_cfg(0.0, 100.0), lossy, &tasks).unwrap();
        for i in 0..100 {
            let out = e.step(&task(10.0, 1e9, 100, i as f64), 2, None).unwrap();
            assert!(!out.success);
            assert_eq!(out.reward, -1.0);
        }
    }

    #[test]
    fn reward_on_success_is_negative_normalized_energy() {
        let cfg = EnvConfig {
            energy_norm_j: Some(10.0),
            ..static_cfg(0.0, 100.0)
        };
        let mut e = env(cfg);
        let out = e.step(&task(600.0, 1e4, 100, 0.0), 0, None).unwrap();
        assert!(out.success);
        assert_eq!(out.reward, -(out.energy_j / 10.0));
        assert!(out.energy_j > 0.0);
    }

    #[test]
    fn invalid_action_leaves_env_untouched() {
        let mut e = env(static_cfg(0.0, 100.0));
        let before = e.now_s();
        assert_eq!(
            e.step(&task(10.0, 1.0, 10, 50.0), 3, None).unwrap_err(),
            EnvError::InvalidAction(3)
        );
        assert_eq!(e.now_s(), before);
    }

    #[test]
    fn local_job_occupies_share_until_done() {
        let cfg = EnvConfig {
            device: DeviceProfile {
                cpu_mhz: 1200.0,
                decision_time_ms: 1.0,
                local_task_share: 0.25,
                ..DeviceProfile::sbc()
            },
            ..static_cfg(0.0, 100.0)
        };
        let mut e = env(cfg);
        // 600 megacycles at 1200 MHz: runs from t=1 ms to t=501 ms.
        e.step(&task(600.0, 1e6, 100, 0.0), 0, None).unwrap();
        let probe = |e: &mut OffloadEnv, t: f64| e.observe(&task(1.0, 1.0, 1, t)).r_ue;
        assert_eq!(probe(&mut e, 0.0005), 1.0);
        assert_eq!(probe(&mut e, 0.2), 0.75);
        assert_eq!(probe(&mut e, 0.5005), 0.75);
        assert_eq!(probe(&mut e, 0.5015), 1.0);
    }

    #[test]
    fn eta_must_dominate() {
        let cfg = EnvConfig {
            eta: -1e-6,
            ..static_cfg(0.0, 100.0)
        };
        let tasks = [task(1000.0, 1000.0, 1000, 0.0)];
        assert!(matches!(
            OffloadEnv::new(cfg, NetemConfig::default(), &tasks),
            Err(EnvError::Config(_))
        ));
        let cfg = EnvConfig {
            eta: 0.5,
            ..static_cfg(0.0, 100.0)
        };
        assert!(cfg.validate().is_err());
    }
}
