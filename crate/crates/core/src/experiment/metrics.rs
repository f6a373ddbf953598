//! Per-step records, run summaries and their text formats.
//!
//! Records are comma-separated with the fixed header [`RECORDS_HEADER`].
//! Floats are written in shortest round-trip form, booleans as `0`/`1`.
//! Summaries are `key = value` lines in a fixed order.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use crate::agents::ModelKind;
use crate::experiment::ExperimentError;
use crate::learner::{ClientStep, TrainingMode, WireCounters};
use crate::taskgen::TaskSpec;

pub const RECORDS_HEADER: &str = "step,task_id,arrival_s,r_ue,r_mec,throughput_mbps,compute_megacycles,deadline_ms,\
action,reward,success,delivered,energy_j,decision_ms,uplink_ms,processing_ms,downlink_ms,latency_ms,\
train_time_ms,train_energy_j,total_latency_ms,total_energy_j,staleness,weight_version";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub task_id: u32,
    pub arrival_s: f64,
    /// Raw observation: UE availability, MEC availability, throughput,
    /// compute size, deadline.
    pub state: [f64; 5],
    pub action: u8,
    pub reward: f64,
    pub success: bool,
    pub delivered: bool,
    /// Energy of executing the task.
    pub energy_j: f64,
    pub decision_ms: f64,
    pub uplink_ms: f64,
    pub processing_ms: f64,
    pub downlink_ms: f64,
    /// Task latency as scored by the environment.
    pub latency_ms: f64,
    pub train_time_ms: f64,
    pub train_energy_j: f64,
    pub total_latency_ms: f64,
    pub total_energy_j: f64,
    pub staleness: u64,
    pub weight_version: u64,
}

impl MetricsRecord {
    pub fn from_step(step: u64, task: &TaskSpec, s: &ClientStep) -> Self {
        let o = &s.outcome;
        Self {
            step,
            task_id: task.task_id,
            arrival_s: task.arrival_time,
            state: [
                o.state.r_ue,
                o.state.r_mec,
                o.state.throughput_mbps,
                o.state.compute_megacycles,
                o.state.deadline_ms,
            ],
            action: o.action,
            reward: o.reward,
            success: o.success,
            delivered: o.delivered,
            energy_j: o.energy_j,
            decision_ms: o.latency.decision_ms,
            uplink_ms: o.latency.uplink_ms,
            processing_ms: o.latency.processing_ms,
            downlink_ms: o.latency.downlink_ms,
            latency_ms: o.latency.total_ms,
            train_time_ms: s.train_time_ms,
            train_energy_j: s.train_energy_j,
            total_latency_ms: s.total_latency_ms,
            total_energy_j: s.total_energy_j,
            staleness: s.staleness,
            weight_version: s.weight_version,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = String::with_capacity(256);
        let [a, b, c, d, e] = self.state;
        write!(
            line,
            "{},{},{},{a},{b},{c},{d},{e},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.task_id,
            self.arrival_s,
            self.action,
            self.reward,
            self.success as u8,
            self.delivered as u8,
            self.energy_j,
            self.decision_ms,
            self.uplink_ms,
            self.processing_ms,
            self.downlink_ms,
            self.latency_ms,
            self.train_time_ms,
            self.train_energy_j,
            self.total_latency_ms,
            self.total_energy_j,
            self.staleness,
            self.weight_version,
        )
        .expect("writing to a String");
        line
    }

    pub fn parse_csv_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 24 {
            return Err(format!("expected 24 fields, found {}", f.len()));
        }
        fn num<T: std::str::FromStr>(f: &[&str], i: usize) -> Result<T, String> {
            f[i].parse().map_err(|_| format!("field {} ({:?}) is not a number", i + 1, f[i]))
        }
        let flag = |i: usize| match f[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("field {} ({other:?}) is not 0 or 1", i + 1)),
        };
        Ok(Self {
            step: num(&f, 0)?,
            task_id: num(&f, 1)?,
            arrival_s: num(&f, 2)?,
            state: [num(&f, 3)?, num(&f, 4)?, num(&f, 5)?, num(&f, 6)?, num(&f, 7)?],
            action: num(&f, 8)?,
            reward: num(&f, 9)?,
            success: flag(10)?,
            delivered: flag(11)?,
            energy_j: num(&f, 12)?,
            decision_ms: num(&f, 13)?,
            uplink_ms: num(&f, 14)?,
            processing_ms: num(&f, 15)?,
            downlink_ms: num(&f, 16)?,
            latency_ms: num(&f, 17)?,
            train_time_ms: num(&f, 18)?,
            train_energy_j: num(&f, 19)?,
            total_latency_ms: num(&f, 20)?,
            total_energy_j: num(&f, 21)?,
            staleness: num(&f, 22)?,
            weight_version: num(&f, 23)?,
        })
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[MetricsRecord]) -> io::Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    w.flush()
}

pub fn parse_records<R: BufRead>(r: R) -> Result<Vec<MetricsRecord>, ExperimentError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| ExperimentError::Parse(e.to_string()))?
        .unwrap_or_default();
    if header.trim_end() != RECORDS_HEADER {
        return Err(ExperimentError::Parse("records header does not match".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| ExperimentError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::parse_csv_line(&line).map_err(|e| ExperimentError::Parse(format!("records line {}: {e}", n + 2)))?);
    }
    Ok(out)
}

/// Bytes and frames that crossed the client's link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireTotals {
    pub experience_frames: u64,
    pub experience_bytes: u64,
    pub weights_frames: u64,
    pub weights_bytes: u64,
    pub upload_bytes: u64,
}

impl From<WireCounters> for WireTotals {
    fn from(c: WireCounters) -> Self {
        Self {
            experience_frames: c.experience_frames,
            experience_bytes: c.experience_bytes,
            weights_frames: c.weights_frames,
            weights_bytes: c.weights_bytes,
            upload_bytes: c.upload_bytes,
        }
    }
}

impl WireTotals {
    /// Experience plus weights traffic; the one-off model upload is separate.
    pub fn wire_bytes(&self) -> u64 {
        self.experience_bytes + self.weights_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: TrainingMode,
    pub agent_kind: ModelKind,
    pub tasks: u64,
    pub cumulative_reward: f64,
    pub success_rate: f64,
    pub mean_energy_j: f64,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub mean_staleness: f64,
    pub max_staleness: u64,
    pub final_weight_version: u64,
    pub wire: WireTotals,
}

/// Nearest-rank percentile of sorted data; 0 for no data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(mode: TrainingMode, agent_kind: ModelKind, records: &[MetricsRecord], wire: WireTotals) -> RunSummary {
    let n = records.len();
    let mean = |f: fn(&MetricsRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mut lat: Vec<f64> = records.iter().map(|r| r.total_latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    RunSummary {
        mode,
        agent_kind,
        tasks: n as u64,
        cumulative_reward: records.iter().map(|r| r.reward).sum(),
        success_rate: mean(|r| r.success as u8 as f64),
        mean_energy_j: mean(|r| r.total_energy_j),
        mean_latency_ms: mean(|r| r.total_latency_ms),
        p50_latency_ms: percentile(&lat, 50.0),
        p95_latency_ms: percentile(&lat, 95.0),
        p99_latency_ms: percentile(&lat, 99.0),
        mean_staleness: mean(|r| r.staleness as f64),
        max_staleness: records.iter().map(|r| r.staleness).max().unwrap_or(0),
        final_weight_version: records.last().map_or(0, |r| r.weight_version),
        wire,
    }
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("writing to a String");
        };
        kv("mode", &self.mode);
        kv("agent_kind", &self.agent_kind);
        kv("tasks", &self.tasks);
        kv("cumulative_reward", &self.cumulative_reward);
        kv("success_rate", &self.success_rate);
        kv("mean_energy_j", &self.mean_energy_j);
        kv("mean_latency_ms", &self.mean_latency_ms);
        kv("p50_latency_ms", &self.p50_latency_ms);
        kv("p95_latency_ms", &self.p95_latency_ms);
        kv("p99_latency_ms", &self.p99_latency_ms);
        kv("mean_staleness", &self.mean_staleness);
        kv("max_staleness", &self.max_staleness);
        kv("final_weight_version", &self.final_weight_version);
        kv("wire_bytes", &self.wire.wire_bytes());
        kv("experience_frames", &self.wire.experience_frames);
        kv("experience_bytes", &self.wire.experience_bytes);
        kv("weights_frames", &self.wire.weights_frames);
        kv("weights_bytes", &self.wire.weights_bytes);
        kv("upload_bytes", &self.wire.upload_bytes);
        s
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| ExperimentError::Parse(format!("summary line {line:?} is not `key = value`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(map: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T, ExperimentError> {
            map.get(k)
                .ok_or_else(|| ExperimentError::Parse(format!("summary is missing {k}")))?
                .parse()
                .map_err(|_| ExperimentError::Parse(format!("summary value for {k} is malformed")))
        }
        let mode = match map.get("mode").map(String::as_str) {
            Some("local") => TrainingMode::Local,
            Some("remote") => TrainingMode::Remote,
            _ => return Err(ExperimentError::Parse("summary mode is missing or unknown".into())),
        };
        let wire = WireTotals {
            experience_frames: get(&map, "experience_frames")?,
            experience_bytes: get(&map, "experience_bytes")?,
            weights_frames: get(&map, "weights_frames")?,
            weights_bytes: get(&map, "weights_bytes")?,
            upload_bytes: get(&map, "upload_bytes")?,
        };
        if get::<u64>(&map, "wire_bytes")? != wire.wire_bytes() {
            return Err(ExperimentError::Parse("summary wire_bytes is inconsistent".into()));
        }
        Ok(Self {
            mode,
            agent_kind: get(&map, "agent_kind")?,
            tasks: get(&map, "tasks")?,
            cumulative_reward: get(&map, "cumulative_reward")?,
            success_rate: get(&map, "success_rate")?,
            mean_energy_j: get(&map, "mean_energy_j")?,
            mean_latency_ms: get(&map, "mean_latency_ms")?,
            p50_latency_ms: get(&map, "p50_latency_ms")?,
            p95_latency_ms: get(&map, "p95_latency_ms")?,
            p99_latency_ms: get(&map, "p99_latency_ms")?,
            mean_staleness: get(&map, "mean_staleness")?,
            max_staleness: get(&map, "max_staleness")?,
            final_weight_version: get(&map, "final_weight_version")?,
            wire,
        })
    }
}

/// Remote minus local, on identical workloads and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub local: RunSummary,
    pub remote: RunSummary,
}

impl ModeComparison {
    pub fn delta_cumulative_reward(&self) -> f64 {
        self.remote.cumulative_reward - self.local.cumulative_reward
    }

    pub fn delta_mean_latency_ms(&self) -> f64 {
        self.remote.mean_latency_ms - self.local.mean_latency_ms
    }

    pub fn delta_mean_energy_j(&self) -> f64 {
        self.remote.mean_energy_j - self.local.mean_energy_j
    }

    pub fn delta_mean_staleness(&self) -> f64 {
        self.remote.mean_staleness - self.local.mean_staleness
    }

    pub fn delta_success_rate(&self) -> f64 {
        self.remote.success_rate - self.local.success_rate
    }

    pub fn delta_wire_bytes(&self) -> i64 {
        self.remote.wire.wire_bytes() as i64 - self.local.wire.wire_bytes() as i64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (prefix, sum) in [("local", &self.local), ("remote", &self.remote)] {
            for line in sum.to_text().lines() {
                writeln!(s, "{prefix}.{line}").expect("writing to a String");
            }
        }
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "delta.{k} = {v}").expect("writing to a String");
        };
        kv("cumulative_reward", &self.delta_cumulative_reward());
        kv("success_rate", &self.delta_success_rate());
        kv("mean_latency_ms", &self.delta_mean_latency_ms());
        kv("mean_energy_j", &self.delta_mean_energy_j());
        kv("mean_staleness", &self.delta_mean_staleness());
        kv("wire_bytes", &self.delta_wire_bytes());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, reward: f64, lat: f64) -> MetricsRecord {
        MetricsRecord {
            step,
            task_id: 3,
            arrival_s: 0.1 * step as f64,
            state: [1.0, 0.7, 512.25, 1234.5, 130.1],
            action: (step % 3) as u8,
            reward,
            success: reward > -1.0,
            delivered: true,
            energy_j: 0.01,
            decision_ms: 2.0,
            uplink_ms: 0.5,
            processing_ms: 10.0 / 3.0,
            downlink_ms: 0.25,
            latency_ms: lat,
            train_time_ms: 24.0,
            train_energy_j: 0.11,
            total_latency_ms: lat + 24.0,
            total_energy_j: 0.12,
            staleness: 1,
            weight_version: step,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rs: Vec<MetricsRecord> = (0..20).map(|i| record(i, -0.1 / (i as f64 + 1.0), 0.3 * i as f64)).collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &rs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(RECORDS_HEADER));
        assert_eq!(parse_records(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn header_is_fixed() {
        assert_eq!(RECORDS_HEADER.split(',').count(), 24);
        assert!(parse_records("step,reward\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_run_summary_is_zero() {
        let s = summarize(TrainingMode::Local, ModelKind::Ac, &[], WireTotals::default());
        assert_eq!(s.tasks, 0);
        assert_eq!(s.cumulative_reward, 0.0);
        assert_eq!(s.mean_latency_ms, 0.0);
        assert_eq!(s.p99_latency_ms, 0.0);
    }

    #[test]
    fn summary_text_round_trip() {
        let rs: Vec<MetricsRecord> = (0..7).map(|i| record(i, -0.37 * i as f64, 1.0 + i as f64)).collect();
        let wire = WireTotals {
            experience_frames: 7,
            experience_bytes: 7 * 94,
            weights_frames: 6,
            weights_bytes: 6000,
            upload_bytes: 12,
        };
        let s = summarize(TrainingMode::Remote, ModelKind::Dqn, &rs, wire);
        assert_eq!(RunSummary::parse(&s.to_text()).unwrap(), s);
        assert_eq!(s.cumulative_reward, rs.iter().map(|r| r.reward).sum::<f64>());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[4.0], 99.0), 4.0);
    }
}
