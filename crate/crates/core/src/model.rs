//! Domain entities: regions, GPU models and nodes, task specs and records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::time::SimTime;

/// Reference GPU throughput (RTX 4090, Tensor32 TFLOPS). Task base times are
/// expressed on this device.
pub const REF_TFLOPS: f64 = 82.6;

pub type GpuId = u32;
pub type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    UsEast,
    UsWest,
    EuWest,
    EuCentral,
    AsiaEast,
    AsiaSouth,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::UsEast,
        Region::UsWest,
        Region::EuWest,
        Region::EuCentral,
        Region::AsiaEast,
        Region::AsiaSouth,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::UsEast => "US-East",
            Region::UsWest => "US-West",
            Region::EuWest => "EU-West",
            Region::EuCentral => "EU-Central",
            Region::AsiaEast => "Asia-East",
            Region::AsiaSouth => "Asia-South",
        }
    }

    /// (latitude, longitude) in degrees of the region's reference site.
    pub fn coordinates(self) -> (f64, f64) {
        match self {
            Region::UsEast => (38.9, -77.4),
            Region::UsWest => (37.4, -122.1),
            Region::EuWest => (53.3, -6.3),
            Region::EuCentral => (50.1, 8.7),
            Region::AsiaEast => (35.7, 139.7),
            Region::AsiaSouth => (19.1, 72.9),
        }
    }

    /// Default egress price in USD per GB for data leaving this region.
    pub fn default_egress_per_gb(self) -> f64 {
        match self {
            Region::UsEast | Region::UsWest => 0.05,
            Region::EuWest | Region::EuCentral => 0.06,
            Region::AsiaEast => 0.08,
            Region::AsiaSouth => 0.09,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Region::ALL
            .into_iter()
            .find(|r| {
                r.name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_ascii_lowercase()
                    == norm
            })
            .ok_or_else(|| ConfigError::UnknownRegion(s.to_string()))
    }
}

/// Static characteristics of one GPU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuModel {
    pub name: String,
    pub memory_gb: f64,
    pub tflops: f64,
    /// Relative availability weight used to apportion a fleet.
    pub quantity: u32,
    pub hourly_cost_usd: f64,
}

/// The four representative community GPU models.
pub fn default_catalog() -> Vec<GpuModel> {
    let m = |name: &str, memory_gb, tflops, quantity, hourly_cost_usd| GpuModel {
        name: name.to_string(),
        memory_gb,
        tflops,
        quantity,
        hourly_cost_usd,
    };
    vec![
        m("H100", 80.0, 989.0, 45, 2.26),
        m("RTX4090", 24.0, 82.6, 2064, 0.40),
        m("RTX3080", 12.0, 29.8, 128, 0.09),
        m("RTX3060", 12.0, 12.4, 654, 0.06),
    ]
}

/// Largest-remainder apportionment of `total` units over `weights`.
///
/// Ties in the remainder go to the earlier entry.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuNode {
    pub id: GpuId,
    pub model_name: String,
    pub tflops: f64,
    pub memory_gb: f64,
    pub region: Region,
    pub hourly_cost_usd: f64,
    pub base_dropout_per_hour: f64,
    pub online: bool,
    pub busy_task: Option<TaskId>,
    pub last_offline_at: Option<SimTime>,
    pub last_online_at: SimTime,
}

impl GpuNode {
    pub fn new(id: GpuId, model: &GpuModel, region: Region, dropout_per_hour: f64) -> Self {
        GpuNode {
            id,
            model_name: model.name.clone(),
            tflops: model.tflops,
            memory_gb: model.memory_gb,
            region,
            hourly_cost_usd: model.hourly_cost_usd,
            base_dropout_per_hour: dropout_per_hour,
            online: true,
            busy_task: None,
            last_offline_at: None,
            last_online_at: SimTime::ZERO,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.online && self.busy_task.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommPattern {
    PointToPoint,
    ComputeHeavy,
    AllReduce,
    Ring,
}

impl CommPattern {
    pub const ALL: [CommPattern; 4] = [
        CommPattern::PointToPoint,
        CommPattern::ComputeHeavy,
        CommPattern::AllReduce,
        CommPattern::Ring,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for CommPattern {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pointtopoint" | "p2p" => Ok(CommPattern::PointToPoint),
            "computeheavy" => Ok(CommPattern::ComputeHeavy),
            "allreduce" => Ok(CommPattern::AllReduce),
            "ring" => Ok(CommPattern::Ring),
            _ => Err(ConfigError::Invalid {
                key: "comm_profile".into(),
                reason: format!("unknown communication pattern {s:?}"),
            }),
        }
    }
}

/// Communication pattern plus its intensity in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommProfile {
    pub pattern: CommPattern,
    pub intensity: f64,
}

/// Immutable description of a job as generated by the workload module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub template_name: String,
    pub gpus_required: u32,
    pub mem_per_gpu_gb: f64,
    pub base_hours: f64,
    pub arrival: SimTime,
    pub deadline: SimTime,
    pub critical: bool,
    pub comm: CommProfile,
    pub data_region: Region,
    pub data_volume_gb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Staging,
    Running,
    CompletedOnTime,
    CompletedLate,
    Failed,
    Expired,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskStatus::CompletedOnTime | TaskStatus::CompletedLate | TaskStatus::Failed | TaskStatus::Expired
        )
    }

    pub fn is_completed(self) -> bool {
        matches!(self, TaskStatus::CompletedOnTime | TaskStatus::CompletedLate)
    }

    pub fn is_in_flight(self) -> bool {
        matches!(self, TaskStatus::Staging | TaskStatus::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Staging => "staging",
            TaskStatus::Running => "running",
            TaskStatus::CompletedOnTime => "completed_on_time",
            TaskStatus::CompletedLate => "completed_late",
            TaskStatus::Failed => "failed",
            TaskStatus::Expired => "expired",
        }
    }
}

/// A task plus its lifecycle state inside the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub spec: TaskSpec,
    pub status: TaskStatus,
    pub assigned_gpus: Option<Vec<GpuId>>,
    pub dispatched_at: Option<SimTime>,
    pub started_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
    /// Communication penalty frozen at dispatch.
    pub p_comm: f64,
    /// Critical-link bandwidth observed at dispatch, Gbps.
    pub b_eff_gbps: f64,
    pub compute_hours: f64,
}

impl TaskRecord {
    pub fn new(spec: TaskSpec) -> Self {
        TaskRecord {
            spec,
            status: TaskStatus::Pending,
            assigned_gpus: None,
            dispatched_at: None,
            started_at: None,
            finished_at: None,
            p_comm: 1.0,
            b_eff_gbps: f64::INFINITY,
            compute_hours: 0.0,
        }
    }

    pub fn id(&self) -> TaskId {
        self.spec.id
    }
}
