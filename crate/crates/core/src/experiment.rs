//! Run orchestration: single runs to files, sweep grids and report tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::MetricsReport;
use crate::config::{Preset, ScenarioConfig};
use crate::engine::{ChurnStats, Engine, TraceRecord};
use crate::error::{BridgeError, ConfigError};
use crate::scheduling::{baseline, Scheduler, SchedulerKind};
use crate::workload::PatternKind;

pub const TRACE_HEADER: &str = "time_s,event,task_id,gpu_ids,status,reward,cost_usd,p_comm,bandwidth_penalty";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run aborted by the scheduling strategy")]
    Aborted,
    #[error("sweep member failed [{config}]: {source}")]
    Member {
        config: String,
        source: Box<ExperimentError>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Formats one trace row (no trailing newline).
pub fn trace_row(r: &TraceRecord) -> String {
    let ids: Vec<String> = r.gpu_ids.iter().map(u32::to_string).collect();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.time.secs(),
        r.event,
        r.task_id.map(|t| t.to_string()).unwrap_or_default(),
        ids.join(";"),
        r.status.map(|s| s.as_str()).unwrap_or_default(),
        opt(r.reward),
        opt(r.cost_usd),
        opt(r.p_comm),
        opt(r.bandwidth_penalty),
    )
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub trace_csv: String,
    pub churn: ChurnStats,
    pub congestion_events: u64,
    pub events_processed: u64,
}

impl RunOutput {
    pub fn metrics_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.metrics).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Runs one simulation with the given strategy, capturing the trace in memory.
pub fn run_with(
    config: &ScenarioConfig,
    seed: u64,
    scheduler: Box<dyn Scheduler + Send>,
) -> Result<RunOutput, ExperimentError> {
    let mut engine = Engine::new(config, seed)?;
    let buf = Arc::new(Mutex::new(format!("{TRACE_HEADER}\n")));
    let sink = Arc::clone(&buf);
    engine.set_trace_hook(Box::new(move |r| {
        let mut b = sink.lock().expect("trace buffer");
        b.push_str(&trace_row(r));
        b.push('\n');
    }));
    engine.set_scheduler(scheduler);
    engine.run_to_end();
    if engine.was_aborted() {
        return Err(ExperimentError::Aborted);
    }
    let metrics = engine.metrics();
    let churn = engine.churn_stats();
    let congestion_events = engine.network().congestion_events();
    let events_processed = engine.events_processed();
    drop(engine);
    let trace_csv = Arc::try_unwrap(buf)
        .map(|m| m.into_inner().expect("trace buffer"))
        .unwrap_or_else(|a| a.lock().expect("trace buffer").clone());
    Ok(RunOutput {
        metrics,
        trace_csv,
        churn,
        congestion_events,
        events_processed,
    })
}

/// Runs one simulation with the configured baseline strategy.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, ExperimentError> {
    let scheduler = baseline(config.scheduler)
        .ok_or_else(|| BridgeError::TransportUnavailable("no agent session is connected".into()))?;
    run_with(config, config.seed, scheduler)
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes metrics.json and trace.csv into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join(TRACE_FILE), &out.trace_csv)?;
    write_atomic(&dir.join(METRICS_FILE), &out.metrics_json())
}

/// Runs and writes both files; nothing is written unless the run succeeds.
pub fn run_to_files(config: &ScenarioConfig, dir: &Path) -> Result<RunOutput, ExperimentError> {
    let out = run(config)?;
    write_outputs(dir, &out)?;
    Ok(out)
}

/// One swept configuration key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    pub fn new<S: ToString>(key: &str, values: impl IntoIterator<Item = S>) -> Self {
        SweepAxis {
            key: key.to_string(),
            values: values.into_iter().map(|v| v.to_string()).collect(),
        }
    }

    /// The axis a preset varies by default.
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Small => SweepAxis::new("workload.n_tasks", Preset::SMALL_TASK_LOADS),
            Preset::Large => SweepAxis::new("workload.n_tasks", [5000]),
            Preset::StressDropout => SweepAxis::new("churn.dropout_multiplier", Preset::DROPOUT_MULTIPLIERS),
            Preset::StressCongestion => SweepAxis::new("network.congestion_multiplier", Preset::CONGESTION_MULTIPLIERS),
        }
    }

    pub fn patterns() -> Self {
        SweepAxis::new("workload.pattern", PatternKind::ALL.iter().map(|p| p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub schedulers: Vec<SchedulerKind>,
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub scheduler: SchedulerKind,
    pub knob: String,
    pub value: String,
    pub seed: u64,
    pub config: ScenarioConfig,
}

/// Cartesian product in (scheduler, value, seed) order.
pub fn expand(spec: &SweepSpec) -> Result<Vec<SweepPoint>, ExperimentError> {
    let mut points = Vec::with_capacity(spec.schedulers.len() * spec.axis.values.len() * spec.seeds.len());
    for &scheduler in &spec.schedulers {
        for value in &spec.axis.values {
            for &seed in &spec.seeds {
                let mut config = spec.base.clone();
                config.set(&spec.axis.key, value)?;
                config.scheduler = scheduler;
                config.seed = seed;
                config.validate()?;
                points.push(SweepPoint {
                    scheduler,
                    knob: spec.axis.key.clone(),
                    value: value.clone(),
                    seed,
                    config,
                });
            }
        }
    }
    Ok(points)
}

/// Flattened metrics for one sweep member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheduler: String,
    pub knob: String,
    pub value: String,
    pub seed: u64,
    pub arrived: u64,
    pub completed_on_time: u64,
    pub completed_late: u64,
    pub failed: u64,
    pub expired: u64,
    pub completion_rate: Option<f64>,
    pub deadline_satisfaction: Option<f64>,
    pub goodput_per_hour: f64,
    pub mean_slowdown: Option<f64>,
    pub p95_slowdown: Option<f64>,
    pub critical_completion_rate: Option<f64>,
    pub critical_deadline_satisfaction: Option<f64>,
    pub normal_completion_rate: Option<f64>,
    pub normal_deadline_satisfaction: Option<f64>,
    pub cost_total_usd: f64,
    pub mean_p_comm: Option<f64>,
    pub mean_reward: Option<f64>,
    pub low_penalty_share: Option<f64>,
}

impl SweepRow {
    pub fn new(point: &SweepPoint, m: &MetricsReport) -> Self {
        let hist_total: u64 = m.bandwidth_penalty_hist.counts.iter().sum();
        SweepRow {
            scheduler: point.scheduler.to_string(),
            knob: point.knob.clone(),
            value: point.value.clone(),
            seed: point.seed,
            arrived: m.counts.arrived,
            completed_on_time: m.counts.completed_on_time,
            completed_late: m.counts.completed_late,
            failed: m.counts.failed,
            expired: m.counts.expired,
            completion_rate: m.completion_rate,
            deadline_satisfaction: m.deadline_satisfaction,
            goodput_per_hour: m.goodput_per_hour,
            mean_slowdown: m.mean_slowdown,
            p95_slowdown: m.p95_slowdown,
            critical_completion_rate: m.per_class.critical.completion_rate,
            critical_deadline_satisfaction: m.per_class.critical.deadline_satisfaction,
            normal_completion_rate: m.per_class.normal.completion_rate,
            normal_deadline_satisfaction: m.per_class.normal.deadline_satisfaction,
            cost_total_usd: m.cost_total_usd,
            mean_p_comm: m.mean_p_comm,
            mean_reward: m.mean_reward,
            low_penalty_share: (hist_total > 0).then(|| m.bandwidth_penalty_hist.counts[0] as f64 / hist_total as f64),
        }
    }
}

pub fn run_point(point: &SweepPoint) -> Result<SweepRow, ExperimentError> {
    run(&point.config)
        .map(|out| SweepRow::new(point, &out.metrics))
        .map_err(|e| ExperimentError::Member {
            config: point.config.summary(),
            source: Box::new(e),
        })
}

pub fn run_batch_sequential(points: &[SweepPoint]) -> Result<Vec<SweepRow>, ExperimentError> {
    points.iter().map(run_point).collect()
}

/// Runs every point, one engine per worker; rows come back in point order.
#[cfg(feature = "parallel")]
pub fn run_batch(points: &[SweepPoint]) -> Result<Vec<SweepRow>, ExperimentError> {
    use rayon::prelude::*;
    points.par_iter().map(run_point).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(points: &[SweepPoint]) -> Result<Vec<SweepRow>, ExperimentError> {
    run_batch_sequential(points)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomic(path, contents)
}

pub fn read_text(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

const AGGREGATED: [&str; 10] = [
    "completion_rate",
    "deadline_satisfaction",
    "goodput_per_hour",
    "mean_slowdown",
    "p95_slowdown",
    "critical_completion_rate",
    "cost_total_usd",
    "mean_p_comm",
    "mean_reward",
    "low_penalty_share",
];

fn metric(row: &SweepRow, name: &str) -> Option<f64> {
    match name {
        "completion_rate" => row.completion_rate,
        "deadline_satisfaction" => row.deadline_satisfaction,
        "goodput_per_hour" => Some(row.goodput_per_hour),
        "mean_slowdown" => row.mean_slowdown,
        "p95_slowdown" => row.p95_slowdown,
        "critical_completion_rate" => row.critical_completion_rate,
        "cost_total_usd" => Some(row.cost_total_usd),
        "mean_p_comm" => row.mean_p_comm,
        "mean_reward" => row.mean_reward,
        "low_penalty_share" => row.low_penalty_share,
        _ => None,
    }
}

/// Mean and sample standard deviation across seeds for every
/// (scheduler, knob, value) group, in first-seen order.
pub fn aggregate(rows: &[SweepRow]) -> String {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.scheduler.clone(), r.knob.clone(), r.value.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = String::from("scheduler,knob,value,runs");
    for m in AGGREGATED {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for key in order {
        let members = &groups[&key];
        out.push_str(&format!("{},{},{},{}", key.0, key.1, key.2, members.len()));
        for m in AGGREGATED {
            let xs: Vec<f64> = members.iter().filter_map(|r| metric(r, m)).collect();
            if xs.is_empty() {
                out.push_str(",,");
            } else {
                let (mean, std) = mean_std(&xs);
                out.push_str(&format!(",{mean},{std}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Empirical CDF rows `label,latency_ms,cdf` over each run's latency samples.
pub fn latency_cdf(runs: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("run,latency_ms,cdf\n");
    for (label, m) in runs {
        let mut xs = m.latency_samples_ms.clone();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        for (i, x) in xs.iter().enumerate() {
            out.push_str(&format!("{label},{x},{}\n", (i + 1) as f64 / n));
        }
    }
    out
}

/// Bandwidth-penalty histogram rows `run,bin_lo,bin_hi,count`.
pub fn penalty_histogram(runs: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("run,bin_lo,bin_hi,count\n");
    for (label, m) in runs {
        let h = &m.bandwidth_penalty_hist;
        for (i, c) in h.counts.iter().enumerate() {
            out.push_str(&format!("{label},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskStatus;
    use crate::time::SimTime;

    fn small(n: usize) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset("small").unwrap();
        c.workload.n_tasks = n;
        c
    }

    #[test]
    fn trace_row_formats_empty_fields() {
        let r = TraceRecord {
            time: SimTime::from_secs(12.5),
            event: "dispatch",
            task_id: Some(4),
            gpu_ids: vec![1, 7],
            status: Some(TaskStatus::Staging),
            reward: None,
            cost_usd: Some(0.25),
            p_comm: Some(1.0),
            bandwidth_penalty: Some(0.0),
        };
        assert_eq!(trace_row(&r), "12.5,dispatch,4,1;7,staging,,0.25,1,0");
    }

    #[test]
    fn grid_is_cartesian() {
        let spec = SweepSpec {
            base: small(50),
            schedulers: vec![
                SchedulerKind::Greedy,
                SchedulerKind::Random,
                SchedulerKind::RoundRobin,
                SchedulerKind::Agent,
            ],
            axis: SweepAxis::for_preset(Preset::Small),
            seeds: vec![1, 2, 3],
        };
        let points = expand(&spec).unwrap();
        assert_eq!(points.len(), 60);
        assert_eq!(points[3].config.workload.n_tasks, 200);
        assert_eq!(points[59].scheduler, SchedulerKind::Agent);
    }

    #[test]
    fn agent_member_without_session_fails_with_echo() {
        let spec = SweepSpec {
            base: small(5),
            schedulers: vec![SchedulerKind::Agent],
            axis: SweepAxis::new("workload.n_tasks", [5]),
            seeds: vec![1],
        };
        let err = run_batch(&expand(&spec).unwrap()).unwrap_err().to_string();
        assert!(err.contains("scheduler=agent"), "{err}");
        assert!(err.contains("agent transport unavailable"), "{err}");
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let spec = SweepSpec {
            base: small(30),
            schedulers: vec![SchedulerKind::Greedy],
            axis: SweepAxis::new("churn.dropout_multiplier", [1, 4]),
            seeds: vec![5, 6],
        };
        let rows = run_batch(&expand(&spec).unwrap()).unwrap();
        assert_eq!(rows, run_batch_sequential(&expand(&spec).unwrap()).unwrap());
        let csv = rows_to_csv(&rows).unwrap();
        assert!(csv.starts_with("scheduler,knob,value,seed,arrived,"));
        assert_eq!(rows_from_csv(&csv).unwrap(), rows);
        let agg = aggregate(&rows);
        assert_eq!(agg.lines().count(), 3);
        assert!(agg
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("greedy,churn.dropout_multiplier,1,2,"));
    }

    #[test]
    fn mean_std_of_known_sample() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
