//! Fixed-schema feature encoding of a scheduling decision.

use std::f64::consts::TAU;
use std::hash::{DefaultHasher, Hasher};

use crate::bridge::protocol::{GLOBAL_DIM, GPU_DIM, TASK_DIM};
use crate::model::{CommPattern, GpuId, GpuNode, Region, TaskRecord};
use crate::network::{NetworkModel, B_REF_GBPS};
use crate::scheduling::CandidateSet;
use crate::time::{SimTime, SECS_PER_HOUR};

const GPUS_SCALE: f64 = 32.0;
const MEMORY_SCALE_GB: f64 = 80.0;
const TFLOPS_SCALE: f64 = 1000.0;
const COST_SCALE_USD: f64 = 2.5;
const LATENCY_SCALE_MS: f64 = 500.0;
const EGRESS_SCALE_USD: f64 = 0.1;
const PENDING_SCALE: f64 = 100.0;
const WINDOW_HOURS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub task_features: Vec<f64>,
    pub gpu_ids: Vec<GpuId>,
    pub gpu_features: Vec<Vec<f64>>,
    pub global_features: Vec<f64>,
}

impl Observation {
    /// Order-sensitive hash of ids and feature bit patterns.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.task_features.iter().chain(&self.global_features) {
            h.write_u64(v.to_bits());
        }
        for (id, row) in self.gpu_ids.iter().zip(&self.gpu_features) {
            h.write_u32(*id);
            for v in row {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Every feature finite and inside its range: sin/cos in [-1, 1], all
    /// others in [0, 1].
    pub fn check_ranges(&self) -> Result<(), String> {
        let check = |name: &str, i: usize, v: f64, lo: f64| {
            if v.is_finite() && (lo..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name}[{i}] = {v} out of range"))
            }
        };
        if self.task_features.len() != TASK_DIM || self.global_features.len() != GLOBAL_DIM {
            return Err("wrong feature dimension".into());
        }
        for (i, &v) in self.task_features.iter().enumerate() {
            check("task", i, v, 0.0)?;
        }
        for (i, &v) in self.global_features.iter().enumerate() {
            check("global", i, v, if i < 2 { -1.0 } else { 0.0 })?;
        }
        if self.gpu_ids.len() != self.gpu_features.len() {
            return Err("gpu ids and features misaligned".into());
        }
        for row in &self.gpu_features {
            if row.len() != GPU_DIM {
                return Err("wrong gpu feature dimension".into());
            }
            for (i, &v) in row.iter().enumerate() {
                check("gpu", i, v, 0.0)?;
            }
        }
        Ok(())
    }
}

fn unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

fn hours_window(secs: f64) -> f64 {
    unit((secs / SECS_PER_HOUR).min(WINDOW_HOURS) / WINDOW_HOURS)
}

fn one_hot(out: &mut Vec<f64>, n: usize, hot: usize) {
    out.extend((0..n).map(|i| if i == hot { 1.0 } else { 0.0 }));
}

pub fn task_features(task: &TaskRecord, now: SimTime) -> Vec<f64> {
    let s = &task.spec;
    let mut f = Vec::with_capacity(TASK_DIM);
    f.push(unit(s.gpus_required as f64 / GPUS_SCALE));
    f.push(unit(s.mem_per_gpu_gb / MEMORY_SCALE_GB));
    f.push(unit((s.deadline - now) / SECS_PER_HOUR / WINDOW_HOURS));
    f.push(if s.critical { 1.0 } else { 0.0 });
    one_hot(&mut f, CommPattern::ALL.len(), s.comm.pattern.index());
    one_hot(&mut f, Region::ALL.len(), s.data_region.index());
    f
}

pub fn gpu_features(
    gpu: &GpuNode,
    data_region: Region,
    now: SimTime,
    network: &NetworkModel,
    delta_max: f64,
) -> Vec<f64> {
    let mut f = Vec::with_capacity(GPU_DIM);
    f.push(unit(gpu.tflops / TFLOPS_SCALE));
    f.push(unit(gpu.memory_gb / MEMORY_SCALE_GB));
    one_hot(&mut f, Region::ALL.len(), gpu.region.index());
    f.push(unit(gpu.hourly_cost_usd / COST_SCALE_USD));
    f.push(if delta_max > 0.0 {
        unit(gpu.base_dropout_per_hour / delta_max)
    } else {
        0.0
    });
    f.push(gpu.last_offline_at.map_or(1.0, |t| hours_window(now - t)));
    f.push(if gpu.online {
        hours_window(now - gpu.last_online_at)
    } else {
        0.0
    });
    f.push(unit(
        network.expected_bandwidth(data_region, gpu.region, now) / B_REF_GBPS,
    ));
    f.push(unit(
        network.base_latency_ms(data_region, gpu.region) / LATENCY_SCALE_MS,
    ));
    f.push(if gpu.region == data_region { 1.0 } else { 0.0 });
    f.push(unit(gpu.region.default_egress_per_gb() / EGRESS_SCALE_USD));
    f
}

pub fn global_features(now: SimTime, fleet: &[GpuNode], network: &NetworkModel, pending_len: usize) -> Vec<f64> {
    let angle = TAU * now.hour_of_day() / 24.0;
    let n = fleet.len().max(1) as f64;
    let online = fleet.iter().filter(|g| g.online).count() as f64;
    let idle = fleet.iter().filter(|g| g.is_idle()).count() as f64;
    vec![
        angle.sin(),
        angle.cos(),
        online / n,
        idle / n,
        unit(pending_len as f64 / PENDING_SCALE),
        unit(network.fraction_congested(now)),
    ]
}

/// Encodes one decision. Candidates appear in ascending GPU id order.
pub fn encode_observation(
    task: &TaskRecord,
    cands: &CandidateSet,
    fleet: &[GpuNode],
    network: &NetworkModel,
    now: SimTime,
    pending_len: usize,
    delta_max: f64,
) -> Observation {
    let gpu_ids = cands.gpu_ids.clone();
    let gpu_features = gpu_ids
        .iter()
        .map(|&id| gpu_features(&fleet[id as usize], task.spec.data_region, now, network, delta_max))
        .collect();
    Observation {
        task_features: task_features(task, now),
        gpu_ids,
        gpu_features,
        global_features: global_features(now, fleet, network, pending_len),
    }
}
