//! Reward, cost ledger and system-level metrics.

use serde::{Deserialize, Serialize};

use crate::error::RewardError;
use crate::model::{GpuModel, Region, TaskId, TaskSpec, TaskStatus, REF_TFLOPS};
use crate::network::bandwidth_penalty;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_comp: f64,
    pub w_deadline: f64,
    pub w_fail: f64,
    pub w_cost: f64,
    pub w_comm: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_comp: 1.0,
            w_deadline: 1.0,
            w_fail: -1.0,
            w_cost: -0.2,
            w_comm: -0.5,
        }
    }
}

/// Weighted reward terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub completion: f64,
    pub deadline: f64,
    pub fail: f64,
    pub cost: f64,
    pub comm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: TaskId,
    pub template_name: String,
    pub critical: bool,
    pub status: TaskStatus,
    pub finished_at: SimTime,
    pub gpu_ids: Vec<u32>,
    pub total_cost_usd: f64,
    pub c_norm: f64,
    pub p_comm: f64,
    /// Critical-link bandwidth at dispatch; infinite when no link was crossed.
    pub b_eff_gbps: f64,
    pub turnaround_s: f64,
    pub ideal_s: f64,
}

impl TaskOutcome {
    pub fn bandwidth_penalty(&self) -> f64 {
        bandwidth_penalty(self.b_eff_gbps)
    }

    pub fn was_dispatched(&self) -> bool {
        !self.gpu_ids.is_empty()
    }
}

pub fn reward_components(outcome: &TaskOutcome, w: &RewardWeights) -> Result<RewardComponents, RewardError> {
    let (ontime, late, fail) = match outcome.status {
        TaskStatus::CompletedOnTime => (1.0, 0.0, 0.0),
        TaskStatus::CompletedLate => (0.0, 1.0, 0.0),
        TaskStatus::Failed => (0.0, 0.0, 1.0),
        TaskStatus::Expired => return Err(RewardError::Expired(outcome.task_id)),
        _ => return Err(RewardError::NotTerminal(outcome.task_id)),
    };
    let completion = w.w_comp * (ontime + late);
    let deadline = w.w_deadline * ontime;
    let fail = w.w_fail * fail;
    let cost = w.w_cost * outcome.c_norm;
    let comm = w.w_comm * (outcome.p_comm - 1.0);
    Ok(RewardComponents {
        completion,
        deadline,
        fail,
        cost,
        comm,
        total: completion + deadline + fail + cost + comm,
    })
}

pub fn reward(outcome: &TaskOutcome, w: &RewardWeights) -> Result<f64, RewardError> {
    reward_components(outcome, w).map(|c| c.total)
}

/// Cheapest cost of running `task` on a single memory-feasible model at
/// reference-scaled duration.
pub fn budget_reference(task: &TaskSpec, catalog: &[GpuModel]) -> f64 {
    let run_cost =
        |m: &GpuModel| task.gpus_required as f64 * m.hourly_cost_usd * task.base_hours * REF_TFLOPS / m.tflops;
    let feasible = catalog
        .iter()
        .filter(|m| m.memory_gb >= task.mem_per_gpu_gb)
        .map(run_cost)
        .fold(f64::INFINITY, f64::min);
    if feasible.is_finite() {
        feasible
    } else {
        catalog.iter().map(run_cost).fold(f64::INFINITY, f64::min)
    }
}

/// Zero-wait, staging-free duration on the fastest memory-feasible model.
pub fn ideal_seconds(task: &TaskSpec, catalog: &[GpuModel]) -> f64 {
    let best = catalog
        .iter()
        .filter(|m| m.memory_gb >= task.mem_per_gpu_gb)
        .map(|m| m.tflops)
        .fold(0.0, f64::max);
    let best = if best > 0.0 {
        best
    } else {
        catalog.iter().map(|m| m.tflops).fold(REF_TFLOPS, f64::max)
    };
    task.base_hours * 3600.0 * REF_TFLOPS / best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub usd: f64,
    pub c_norm: f64,
}

/// Prices a task: hourly GPU rates over `billed_hours` plus egress on the
/// full data volume when any GPU sits outside the data region.
pub fn cost(task: &TaskSpec, gpus: &[(f64, Region)], billed_hours: f64, egress_per_gb: f64, budget_ref: f64) -> Cost {
    let compute: f64 = gpus.iter().map(|(rate, _)| rate * billed_hours).sum();
    let remote = gpus.iter().any(|&(_, r)| r != task.data_region);
    let egress = if remote {
        task.data_volume_gb * egress_per_gb
    } else {
        0.0
    };
    let usd = compute + egress;
    let c_norm = if budget_ref > 0.0 {
        (usd / budget_ref).clamp(0.0, 2.0)
    } else {
        0.0
    };
    Cost { usd, c_norm }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub arrived: u64,
    pub completed_on_time: u64,
    pub completed_late: u64,
    pub failed: u64,
    pub expired: u64,
}

impl Counts {
    pub fn completed(&self) -> u64 {
        self.completed_on_time + self.completed_late
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub arrived: u64,
    pub completed: u64,
    pub completed_on_time: u64,
    pub completion_rate: Option<f64>,
    pub deadline_satisfaction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub critical: ClassMetrics,
    pub normal: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn uniform(bins: usize, lo: f64, hi: f64, values: impl IntoIterator<Item = f64>) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Serialized as `metrics.json`; key order is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completion_rate: Option<f64>,
    pub deadline_satisfaction: Option<f64>,
    pub goodput_per_hour: f64,
    pub mean_slowdown: Option<f64>,
    pub p95_slowdown: Option<f64>,
    pub per_class: PerClass,
    pub bandwidth_penalty_hist: Histogram,
    pub cost_total_usd: f64,
    pub counts: Counts,
    pub horizon_hours: f64,
    pub mean_p_comm: Option<f64>,
    pub mean_reward: Option<f64>,
    pub latency_samples_ms: Vec<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

pub fn slowdown(outcome: &TaskOutcome) -> f64 {
    if outcome.ideal_s > 0.0 {
        (outcome.turnaround_s / outcome.ideal_s).max(1.0)
    } else {
        1.0
    }
}

/// Append-only record of terminal outcomes and sampled latencies for one run.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    outcomes: Vec<TaskOutcome>,
    latency_samples_ms: Vec<f64>,
}

impl Ledger {
    pub fn record(&mut self, outcome: TaskOutcome) {
        self.outcomes.push(outcome);
    }

    pub fn record_latency(&mut self, ms: f64) {
        self.latency_samples_ms.push(ms);
    }

    pub fn outcomes(&self) -> &[TaskOutcome] {
        &self.outcomes
    }

    pub fn metrics(
        &self,
        arrived: u64,
        critical_arrived: u64,
        horizon_hours: f64,
        weights: &RewardWeights,
    ) -> MetricsReport {
        let mut counts = Counts {
            arrived,
            ..Counts::default()
        };
        let mut per_class = PerClass::default();
        per_class.critical.arrived = critical_arrived;
        per_class.normal.arrived = arrived - critical_arrived;
        let mut slowdowns = Vec::new();
        let mut p_comms = Vec::new();
        let mut rewards = Vec::new();
        let mut cost_total = 0.0;
        for o in &self.outcomes {
            let class = if o.critical {
                &mut per_class.critical
            } else {
                &mut per_class.normal
            };
            match o.status {
                TaskStatus::CompletedOnTime => {
                    counts.completed_on_time += 1;
                    class.completed += 1;
                    class.completed_on_time += 1;
                }
                TaskStatus::CompletedLate => {
                    counts.completed_late += 1;
                    class.completed += 1;
                }
                TaskStatus::Failed => counts.failed += 1,
                TaskStatus::Expired => counts.expired += 1,
                _ => {}
            }
            if o.status.is_completed() {
                slowdowns.push(slowdown(o));
            }
            if o.was_dispatched() {
                p_comms.push(o.p_comm);
            }
            if let Ok(r) = reward(o, weights) {
                rewards.push(r);
            }
            cost_total += o.total_cost_usd;
        }
        for class in [&mut per_class.critical, &mut per_class.normal] {
            class.completion_rate = ratio(class.completed, class.arrived);
            class.deadline_satisfaction = ratio(class.completed_on_time, class.completed);
        }
        let penalties = self
            .outcomes
            .iter()
            .filter(|o| o.was_dispatched())
            .map(TaskOutcome::bandwidth_penalty);
        MetricsReport {
            completion_rate: ratio(counts.completed(), counts.arrived),
            deadline_satisfaction: ratio(counts.completed_on_time, counts.completed()),
            goodput_per_hour: counts.completed() as f64 / horizon_hours,
            mean_slowdown: mean(&slowdowns),
            p95_slowdown: percentile(&slowdowns, 0.95),
            per_class,
            bandwidth_penalty_hist: Histogram::uniform(10, 0.0, 1.0, penalties),
            cost_total_usd: cost_total,
            counts,
            horizon_hours,
            mean_p_comm: mean(&p_comms),
            mean_reward: mean(&rewards),
            latency_samples_ms: self.latency_samples_ms.clone(),
        }
    }
}
