//! Candidate filtering, the baseline strategies and the pending-queue order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::accounting::TaskOutcome;
use crate::error::{ConfigError, ScheduleError};
use crate::model::{GpuId, GpuNode, TaskId, TaskRecord, TaskSpec};
use crate::network::NetworkModel;
use crate::time::SimTime;

/// GPUs able to host one slot of a task at a given instant, ascending by id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub task_id: TaskId,
    pub gpu_ids: Vec<GpuId>,
    pub snapshot_time: SimTime,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.gpu_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpu_ids.is_empty()
    }

    pub fn contains(&self, id: GpuId) -> bool {
        self.gpu_ids.binary_search(&id).is_ok()
    }
}

pub fn is_candidate(task: &TaskSpec, gpu: &GpuNode) -> bool {
    gpu.is_idle() && gpu.memory_gb >= task.mem_per_gpu_gb
}

/// Every online, idle, memory-sufficient GPU. `fleet` must be ordered by id.
pub fn filter_candidates(task: &TaskSpec, fleet: &[GpuNode], now: SimTime) -> CandidateSet {
    CandidateSet {
        task_id: task.id,
        gpu_ids: fleet.iter().filter(|g| is_candidate(task, g)).map(|g| g.id).collect(),
        snapshot_time: now,
    }
}

fn ensure(k: usize, cands: &CandidateSet) -> Result<(), ScheduleError> {
    if cands.len() < k {
        Err(ScheduleError::InsufficientCandidates {
            needed: k,
            available: cands.len(),
        })
    } else {
        Ok(())
    }
}

/// Top-k by TFLOPS; ties go to the cheaper GPU, then the lower id.
pub fn greedy_select(cands: &CandidateSet, fleet: &[GpuNode], k: usize) -> Result<Vec<GpuId>, ScheduleError> {
    ensure(k, cands)?;
    let mut v: Vec<&GpuNode> = cands.gpu_ids.iter().map(|&id| &fleet[id as usize]).collect();
    v.sort_by(|a, b| {
        b.tflops
            .total_cmp(&a.tflops)
            .then(a.hourly_cost_usd.total_cmp(&b.hourly_cost_usd))
            .then(a.id.cmp(&b.id))
    });
    Ok(v.into_iter().take(k).map(|g| g.id).collect())
}

/// Uniform k-subset without replacement.
pub fn random_select<R: Rng>(cands: &CandidateSet, k: usize, rng: &mut R) -> Result<Vec<GpuId>, ScheduleError> {
    ensure(k, cands)?;
    Ok(rand::seq::index::sample(rng, cands.len(), k)
        .into_iter()
        .map(|i| cands.gpu_ids[i])
        .collect())
}

/// Walks the global id list from `*pointer`, taking the first k candidates,
/// and leaves the pointer just past the last GPU taken.
pub fn roundrobin_select(
    cands: &CandidateSet,
    fleet_len: usize,
    k: usize,
    pointer: &mut usize,
) -> Result<Vec<GpuId>, ScheduleError> {
    ensure(k, cands)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut taken = Vec::with_capacity(k);
    let start = *pointer % fleet_len;
    for step in 0..fleet_len {
        let idx = (start + step) % fleet_len;
        if cands.contains(idx as GpuId) {
            taken.push(idx as GpuId);
            if taken.len() == k {
                *pointer = (idx + 1) % fleet_len;
                break;
            }
        }
    }
    Ok(taken)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Greedy,
    Random,
    RoundRobin,
    Agent,
}

impl SchedulerKind {
    pub const BASELINES: [SchedulerKind; 3] = [SchedulerKind::Greedy, SchedulerKind::Random, SchedulerKind::RoundRobin];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Greedy => "greedy",
            SchedulerKind::Random => "random",
            SchedulerKind::RoundRobin => "roundrobin",
            SchedulerKind::Agent => "agent",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "greedy" => Ok(SchedulerKind::Greedy),
            "random" => Ok(SchedulerKind::Random),
            "roundrobin" | "rr" => Ok(SchedulerKind::RoundRobin),
            "agent" => Ok(SchedulerKind::Agent),
            _ => Err(ConfigError::invalid("scheduler", format!("unknown scheduler {s:?}"))),
        }
    }
}

/// Read-only engine state handed to a strategy for one decision.
pub struct DecisionContext<'a> {
    pub now: SimTime,
    pub task: &'a TaskRecord,
    pub fleet: &'a [GpuNode],
    pub network: &'a NetworkModel,
    pub pending_len: usize,
}

/// A placement strategy driven by the engine's pending-queue scan.
pub trait Scheduler {
    fn name(&self) -> &str;

    /// Returns exactly `task.gpus_required` distinct ids from `cands`.
    fn select(
        &mut self,
        ctx: &DecisionContext<'_>,
        cands: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError>;

    /// Called for every terminal outcome, in event order.
    fn on_outcome(&mut self, _outcome: &TaskOutcome) {}

    /// Called once after the horizon is processed.
    fn on_horizon_end(&mut self) {}

    /// A strategy may ask the engine to stop early (e.g. its peer went away).
    fn abort_requested(&self) -> bool {
        false
    }
}

#[derive(Debug, Default)]
pub struct Greedy;

impl Scheduler for Greedy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn select(
        &mut self,
        ctx: &DecisionContext<'_>,
        cands: &CandidateSet,
        _: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError> {
        greedy_select(cands, ctx.fleet, ctx.task.spec.gpus_required as usize)
    }
}

#[derive(Debug, Default)]
pub struct RandomPick;

impl Scheduler for RandomPick {
    fn name(&self) -> &str {
        "random"
    }

    fn select(
        &mut self,
        ctx: &DecisionContext<'_>,
        cands: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError> {
        random_select(cands, ctx.task.spec.gpus_required as usize, rng)
    }
}

#[derive(Debug, Default)]
pub struct RoundRobin {
    pub pointer: usize,
}

impl Scheduler for RoundRobin {
    fn name(&self) -> &str {
        "roundrobin"
    }

    fn select(
        &mut self,
        ctx: &DecisionContext<'_>,
        cands: &CandidateSet,
        _: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError> {
        roundrobin_select(
            cands,
            ctx.fleet.len(),
            ctx.task.spec.gpus_required as usize,
            &mut self.pointer,
        )
    }
}

/// Builds one of the baseline strategies. `Agent` has no local implementation.
pub fn baseline(kind: SchedulerKind) -> Option<Box<dyn Scheduler + Send>> {
    match kind {
        SchedulerKind::Greedy => Some(Box::new(Greedy)),
        SchedulerKind::Random => Some(Box::new(RandomPick)),
        SchedulerKind::RoundRobin => Some(Box::new(RoundRobin::default())),
        SchedulerKind::Agent => None,
    }
}

/// Pending-queue position: critical first, then FIFO by arrival, then id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueueKey {
    class: u8,
    arrival_bits: u64,
    id: TaskId,
}

impl QueueKey {
    pub fn of(task: &TaskSpec) -> Self {
        // Non-negative finite f64s order the same as their bit patterns.
        QueueKey {
            class: u8::from(!task.critical),
            arrival_bits: task.arrival.secs().to_bits(),
            id: task.id,
        }
    }

    pub fn id(&self) -> TaskId {
        self.id
    }
}
