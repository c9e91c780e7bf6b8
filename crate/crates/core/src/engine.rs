//! The discrete-event engine: clock, entity state, churn, dispatch and the
//! task lifecycle.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use log::{debug, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::accounting::{budget_reference, cost, ideal_seconds, reward, Ledger, MetricsReport, TaskOutcome};
use crate::config::ScenarioConfig;
use crate::error::{ConfigError, DispatchError};
use crate::model::{apportion, GpuId, GpuNode, Region, TaskId, TaskRecord, TaskSpec, TaskStatus, REF_TFLOPS};
use crate::network::{bandwidth_penalty, Congestion, NetworkModel};
use crate::rng::{stream, Stream};
use crate::scheduling::{is_candidate, CandidateSet, DecisionContext, QueueKey, Scheduler};
use crate::time::{SimTime, SECS_PER_HOUR};
use crate::workload;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    TaskArrival(TaskId),
    StageComplete(TaskId),
    TaskComplete(TaskId),
    GpuFailure(GpuId),
    GpuRecovery(GpuId),
    CongestionStart(Congestion),
    CongestionEnd(Region, Region),
    PhaseChange(usize),
    SchedulingTick,
    MetricsTick,
    HorizonEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TaskArrival(_) => "task_arrival",
            EventKind::StageComplete(_) => "stage_complete",
            EventKind::TaskComplete(_) => "task_complete",
            EventKind::GpuFailure(_) => "gpu_failure",
            EventKind::GpuRecovery(_) => "gpu_recovery",
            EventKind::CongestionStart(_) => "congestion_start",
            EventKind::CongestionEnd(..) => "congestion_end",
            EventKind::PhaseChange(_) => "phase_change",
            EventKind::SchedulingTick => "scheduling_tick",
            EventKind::MetricsTick => "metrics_tick",
            EventKind::HorizonEnd => "horizon_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One row of the per-event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub event: &'static str,
    pub task_id: Option<TaskId>,
    pub gpu_ids: Vec<GpuId>,
    pub status: Option<TaskStatus>,
    pub reward: Option<f64>,
    pub cost_usd: Option<f64>,
    pub p_comm: Option<f64>,
    pub bandwidth_penalty: Option<f64>,
}

impl TraceRecord {
    fn bare(time: SimTime, event: &'static str) -> Self {
        TraceRecord {
            time,
            event,
            task_id: None,
            gpu_ids: Vec::new(),
            status: None,
            reward: None,
            cost_usd: None,
            p_comm: None,
            bandwidth_penalty: None,
        }
    }
}

pub type TraceHook = Box<dyn FnMut(&TraceRecord) + Send>;

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchReceipt {
    pub task_id: TaskId,
    pub gpu_ids: Vec<GpuId>,
    pub staging_secs: f64,
    pub compute_hours: f64,
    pub p_comm: f64,
    pub predicted_finish: SimTime,
    pub estimated_cost_usd: f64,
}

/// Failure counts and online exposure, for churn calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChurnStats {
    pub failures: u64,
    pub recoveries: u64,
    pub online_gpu_secs: f64,
}

impl ChurnStats {
    pub fn online_gpu_hours(&self) -> f64 {
        self.online_gpu_secs / SECS_PER_HOUR
    }
}

/// Hours to run `base_hours` of reference work on `tflops` (the slowest GPU
/// of the set) under communication penalty `p_comm`.
pub fn execution_hours(base_hours: f64, min_tflops: f64, p_comm: f64) -> f64 {
    base_hours * (REF_TFLOPS / min_tflops) * p_comm
}

pub fn execution_time(task: &TaskSpec, gpus: &[&GpuNode], p_comm: f64) -> f64 {
    assert!(!gpus.is_empty(), "execution_time needs at least one GPU");
    let min = gpus.iter().map(|g| g.tflops).fold(f64::INFINITY, f64::min);
    execution_hours(task.base_hours, min, p_comm)
}

/// Builds the fleet: model counts apportioned from the mix, shuffled across
/// ids, regions and base dropout rates drawn per GPU.
pub fn build_fleet(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<GpuNode> {
    let f = &config.fleet;
    let counts = apportion(f.n_gpus, &f.model_mix);
    let mut models: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(m, &c)| std::iter::repeat_n(m, c))
        .collect();
    models.shuffle(rng);
    let regions = WeightedIndex::new(f.region_mix).expect("validated region mix");
    let (lo, hi) = (config.churn.dropout_min, config.churn.dropout_max);
    models
        .into_iter()
        .enumerate()
        .map(|(id, m)| {
            let region = Region::ALL[regions.sample(rng)];
            let dropout = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            GpuNode::new(id as GpuId, &f.catalog[m], region, dropout)
        })
        .collect()
}

pub struct Engine {
    config: ScenarioConfig,
    now: SimTime,
    horizon: SimTime,
    seq: u64,
    queue: BinaryHeap<SimEvent>,
    fleet: Vec<GpuNode>,
    tasks: Vec<TaskRecord>,
    pending: BTreeSet<QueueKey>,
    network: NetworkModel,
    churn_rng: ChaCha8Rng,
    network_rng: ChaCha8Rng,
    scheduling_rng: ChaCha8Rng,
    scheduler: Option<Box<dyn Scheduler + Send>>,
    ledger: Ledger,
    arrived: u64,
    critical_arrived: u64,
    churn: ChurnStats,
    trace: Option<TraceHook>,
    max_tflops: f64,
    finished: bool,
    aborted: bool,
    events_processed: u64,
    fresh_outcomes: Vec<TaskOutcome>,
}

impl Engine {
    /// Instantiates fleet, network and workload from `config` and primes the
    /// event queue.
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let fleet = build_fleet(config, &mut stream(seed, Stream::Fleet));
        let tasks = workload::generate(&config.workload, &config.network.phases, seed);
        Self::from_parts(config, seed, fleet, tasks)
    }

    /// Builds an engine over an explicit fleet and task list. GPU ids must be
    /// 0..n in order; task ids must be 0..m in order.
    pub fn from_parts(
        config: &ScenarioConfig,
        seed: u64,
        fleet: Vec<GpuNode>,
        tasks: Vec<TaskSpec>,
    ) -> Result<Self, ConfigError> {
        if fleet.is_empty() {
            return Err(ConfigError::invalid("fleet", "fleet is empty"));
        }
        if fleet.iter().enumerate().any(|(i, g)| g.id as usize != i) {
            return Err(ConfigError::invalid("fleet", "GPU ids must be dense and ordered"));
        }
        if !(config.horizon_hours() > 0.0) {
            return Err(ConfigError::invalid("horizon_hours", "must be positive"));
        }
        let mut network_rng = stream(seed, Stream::Network);
        let network = NetworkModel::new(config.network.clone(), &mut network_rng);
        let max_tflops = config
            .fleet
            .catalog
            .iter()
            .map(|m| m.tflops)
            .chain(fleet.iter().map(|g| g.tflops))
            .fold(0.0, f64::max);
        let mut engine = Engine {
            config: config.clone(),
            now: SimTime::ZERO,
            horizon: SimTime::from_hours(config.horizon_hours()),
            seq: 0,
            queue: BinaryHeap::new(),
            fleet,
            tasks: Vec::with_capacity(tasks.len()),
            pending: BTreeSet::new(),
            network,
            churn_rng: stream(seed, Stream::Churn),
            network_rng,
            scheduling_rng: stream(seed, Stream::Scheduling),
            scheduler: None,
            ledger: Ledger::default(),
            arrived: 0,
            critical_arrived: 0,
            churn: ChurnStats::default(),
            trace: None,
            max_tflops,
            finished: false,
            aborted: false,
            events_processed: 0,
            fresh_outcomes: Vec::new(),
        };
        for spec in tasks {
            engine.submit(spec)?;
        }
        for id in 0..engine.fleet.len() {
            engine.schedule_next_failure(id as GpuId);
        }
        engine.prime_periodic();
        engine.push(engine.horizon, EventKind::HorizonEnd);
        Ok(engine)
    }

    fn prime_periodic(&mut self) {
        let horizon_h = self.config.horizon_hours();
        let mut h = 0.0;
        while h < horizon_h {
            self.push(SimTime::from_hours(h), EventKind::MetricsTick);
            h += 1.0;
        }
        let starts: Vec<(usize, f64)> = self
            .config
            .network
            .phases
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.start_hour))
            .collect();
        let mut day = 0.0;
        while day < horizon_h {
            for &(i, s) in &starts {
                let t = day + s;
                if t > 0.0 && t < horizon_h {
                    self.push(SimTime::from_hours(t), EventKind::PhaseChange(i));
                }
            }
            day += 24.0;
        }
        self.push(SimTime::ZERO, EventKind::SchedulingTick);
    }

    /// Adds a task to the workload. The id is reassigned to the next dense id.
    pub fn submit(&mut self, mut spec: TaskSpec) -> Result<TaskId, ConfigError> {
        if !(spec.deadline > spec.arrival) {
            return Err(ConfigError::invalid("task", "deadline must be after arrival"));
        }
        let id = self.tasks.len() as TaskId;
        spec.id = id;
        let at = spec.arrival;
        self.tasks.push(TaskRecord::new(spec));
        if at <= self.horizon {
            self.push(at.max(self.now), EventKind::TaskArrival(id));
        }
        Ok(id)
    }

    pub fn set_scheduler(&mut self, scheduler: Box<dyn Scheduler + Send>) {
        self.scheduler = Some(scheduler);
    }

    pub fn take_scheduler(&mut self) -> Option<Box<dyn Scheduler + Send>> {
        self.scheduler.take()
    }

    pub fn set_trace_hook(&mut self, hook: TraceHook) {
        self.trace = Some(hook);
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn fleet(&self) -> &[GpuNode] {
        &self.fleet
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskRecord> {
        self.tasks.get(id as usize)
    }

    pub fn network(&self) -> &NetworkModel {
        &self.network
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn churn_stats(&self) -> ChurnStats {
        self.churn
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn was_aborted(&self) -> bool {
        self.aborted
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn metrics(&self) -> MetricsReport {
        self.ledger.metrics(
            self.arrived,
            self.critical_arrived,
            self.config.horizon_hours(),
            &self.config.reward,
        )
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(SimEvent { time, seq, kind });
    }

    fn emit(&mut self, record: TraceRecord) {
        if let Some(hook) = self.trace.as_mut() {
            hook(&record);
        }
    }

    /// Processes every event with time <= `t_end` and returns the terminal
    /// outcomes produced on the way.
    pub fn run_until(&mut self, t_end: SimTime) -> Vec<TaskOutcome> {
        assert!(t_end >= self.now, "run_until cannot move the clock backwards");
        while !self.finished && !self.aborted {
            match self.queue.peek() {
                Some(ev) if ev.time <= t_end => {}
                _ => break,
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.events_processed += 1;
            self.handle(ev.kind);
            if self.scheduler.as_ref().is_some_and(|s| s.abort_requested()) {
                self.aborted = true;
            }
        }
        if !self.finished && !self.aborted {
            self.now = t_end;
        }
        std::mem::take(&mut self.fresh_outcomes)
    }

    /// Runs through HorizonEnd.
    pub fn run_to_end(&mut self) -> Vec<TaskOutcome> {
        let horizon = self.horizon;
        let mut all = Vec::new();
        while !self.finished && !self.aborted {
            let t = self.queue.peek().map_or(horizon, |e| e.time).max(self.now);
            all.extend(self.run_until(t));
        }
        all
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::TaskArrival(id) => {
                let task = &self.tasks[id as usize];
                if task.status != TaskStatus::Pending {
                    return;
                }
                self.arrived += 1;
                if task.spec.critical {
                    self.critical_arrived += 1;
                }
                let key = QueueKey::of(&task.spec);
                self.pending.insert(key);
                let mut rec = TraceRecord::bare(self.now, "task_arrival");
                rec.task_id = Some(id);
                rec.status = Some(TaskStatus::Pending);
                self.emit(rec);
                self.scan();
            }
            EventKind::StageComplete(id) => {
                let now = self.now;
                let t = &mut self.tasks[id as usize];
                if t.status != TaskStatus::Staging {
                    return;
                }
                t.status = TaskStatus::Running;
                t.started_at = Some(now);
                let end = now + t.compute_hours * SECS_PER_HOUR;
                let gpus = t.assigned_gpus.clone().unwrap_or_default();
                self.push(end, EventKind::TaskComplete(id));
                let mut rec = TraceRecord::bare(now, "stage_complete");
                rec.task_id = Some(id);
                rec.gpu_ids = gpus;
                rec.status = Some(TaskStatus::Running);
                self.emit(rec);
            }
            EventKind::TaskComplete(id) => {
                if self.tasks[id as usize].status != TaskStatus::Running {
                    return;
                }
                let on_time = self.now <= self.tasks[id as usize].spec.deadline;
                let status = if on_time {
                    TaskStatus::CompletedOnTime
                } else {
                    TaskStatus::CompletedLate
                };
                self.finish_task(id, status, "task_complete");
                self.scan();
            }
            EventKind::GpuFailure(gpu) => {
                self.fail_gpu(gpu);
                self.scan();
            }
            EventKind::GpuRecovery(gpu) => {
                let now = self.now;
                let g = &mut self.fleet[gpu as usize];
                if g.online {
                    return;
                }
                g.online = true;
                g.last_online_at = now;
                self.churn.recoveries += 1;
                self.schedule_next_failure(gpu);
                let mut rec = TraceRecord::bare(now, "gpu_recovery");
                rec.gpu_ids = vec![gpu];
                self.emit(rec);
                self.scan();
            }
            EventKind::CongestionStart(c) => {
                self.network.start_congestion(&c);
                debug!("congestion {}-{} x{:.2} until {}", c.a, c.b, c.factor, c.until);
            }
            EventKind::CongestionEnd(a, b) => self.network.end_congestion(a, b, self.now),
            EventKind::PhaseChange(i) => {
                debug!("phase -> {}", self.config.network.phases[i].name.as_str());
            }
            EventKind::SchedulingTick => {
                self.scan();
                let next = self.now + self.config.scheduling_tick_secs;
                if next <= self.horizon {
                    self.push(next, EventKind::SchedulingTick);
                }
            }
            EventKind::MetricsTick => {
                let drawn = self.network.draw_congestion(self.now, &mut self.network_rng);
                for c in drawn {
                    self.push(self.now, EventKind::CongestionStart(c));
                    if c.until <= self.horizon {
                        self.push(c.until, EventKind::CongestionEnd(c.a, c.b));
                    }
                }
            }
            EventKind::HorizonEnd => self.end_horizon(),
        }
    }

    fn schedule_next_failure(&mut self, gpu: GpuId) {
        let g = &self.fleet[gpu as usize];
        let rate = g.base_dropout_per_hour * self.config.churn.dropout_multiplier;
        if rate <= 0.0 {
            return;
        }
        let hours: f64 = Exp::new(rate).expect("positive rate").sample(&mut self.churn_rng);
        let at = self.now + hours * SECS_PER_HOUR;
        if at <= self.horizon {
            self.push(at, EventKind::GpuFailure(gpu));
        }
    }

    fn fail_gpu(&mut self, gpu: GpuId) {
        let now = self.now;
        let g = &mut self.fleet[gpu as usize];
        if !g.online {
            return;
        }
        self.churn.failures += 1;
        self.churn.online_gpu_secs += now - g.last_online_at;
        g.online = false;
        g.last_offline_at = Some(now);
        let victim = g.busy_task;
        let mut rec = TraceRecord::bare(now, "gpu_failure");
        rec.gpu_ids = vec![gpu];
        rec.task_id = victim;
        self.emit(rec);
        if let Some(task) = victim {
            self.finish_task(task, TaskStatus::Failed, "task_failed");
        }
        let mean = self.config.churn.mean_downtime_hours;
        let down = if mean > 0.0 {
            Exp::new(1.0 / mean).expect("positive mean").sample(&mut self.churn_rng)
        } else {
            0.0
        };
        let at = now + down * SECS_PER_HOUR;
        if at <= self.horizon {
            self.push(at, EventKind::GpuRecovery(gpu));
        }
    }

    fn release(&mut self, id: TaskId) {
        if let Some(gpus) = self.tasks[id as usize].assigned_gpus.clone() {
            for g in gpus {
                let node = &mut self.fleet[g as usize];
                if node.busy_task == Some(id) {
                    node.busy_task = None;
                }
            }
        }
    }

    fn outcome_for(&self, id: TaskId) -> TaskOutcome {
        let t = &self.tasks[id as usize];
        let spec = &t.spec;
        let finished = t.finished_at.unwrap_or(self.now);
        let gpu_ids = t.assigned_gpus.clone().unwrap_or_default();
        let (usd, c_norm) = match t.dispatched_at {
            Some(start) => {
                let gpus: Vec<(f64, Region)> = gpu_ids
                    .iter()
                    .map(|&g| (self.fleet[g as usize].hourly_cost_usd, self.fleet[g as usize].region))
                    .collect();
                let c = cost(
                    spec,
                    &gpus,
                    (finished - start) / SECS_PER_HOUR,
                    spec.data_region.default_egress_per_gb(),
                    budget_reference(spec, &self.config.fleet.catalog),
                );
                (c.usd, c.c_norm)
            }
            None => (0.0, 0.0),
        };
        TaskOutcome {
            task_id: id,
            template_name: spec.template_name.clone(),
            critical: spec.critical,
            status: t.status,
            finished_at: finished,
            gpu_ids,
            total_cost_usd: usd,
            c_norm,
            p_comm: t.p_comm,
            b_eff_gbps: t.b_eff_gbps,
            turnaround_s: finished - spec.arrival,
            ideal_s: ideal_seconds(spec, &self.config.fleet.catalog),
        }
    }

    fn finish_task(&mut self, id: TaskId, status: TaskStatus, event: &'static str) {
        let now = self.now;
        {
            let t = &mut self.tasks[id as usize];
            debug_assert!(!t.status.is_terminal());
            t.status = status;
            t.finished_at = Some(now);
        }
        self.release(id);
        self.pending.remove(&QueueKey::of(&self.tasks[id as usize].spec));
        let outcome = self.outcome_for(id);
        let r = reward(&outcome, &self.config.reward).ok();
        let rec = TraceRecord {
            time: now,
            event,
            task_id: Some(id),
            gpu_ids: outcome.gpu_ids.clone(),
            status: Some(status),
            reward: r,
            cost_usd: Some(outcome.total_cost_usd),
            p_comm: outcome.was_dispatched().then_some(outcome.p_comm),
            bandwidth_penalty: outcome.was_dispatched().then(|| outcome.bandwidth_penalty()),
        };
        self.emit(rec);
        if let Some(s) = self.scheduler.as_mut() {
            s.on_outcome(&outcome);
        }
        self.ledger.record(outcome.clone());
        self.fresh_outcomes.push(outcome);
    }

    fn end_horizon(&mut self) {
        let ids: Vec<TaskId> = self
            .tasks
            .iter()
            .filter(|t| !t.status.is_terminal())
            .filter(|t| t.status != TaskStatus::Pending || self.pending.contains(&QueueKey::of(&t.spec)))
            .map(TaskRecord::id)
            .collect();
        for id in ids {
            let status = if self.tasks[id as usize].status == TaskStatus::Pending {
                TaskStatus::Expired
            } else {
                TaskStatus::Failed
            };
            let event = if status == TaskStatus::Expired {
                "task_expired"
            } else {
                "task_failed"
            };
            self.finish_task(id, status, event);
        }
        let now = self.now;
        for g in self.fleet.iter().filter(|g| g.online) {
            self.churn.online_gpu_secs += now - g.last_online_at;
        }
        if let Some(s) = self.scheduler.as_mut() {
            s.on_horizon_end();
        }
        self.emit(TraceRecord::bare(now, "horizon_end"));
        self.finished = true;
    }

    /// Shortest possible run time: best GPU, no staging, no penalty.
    fn min_duration_secs(&self, spec: &TaskSpec) -> f64 {
        spec.base_hours * SECS_PER_HOUR * REF_TFLOPS / self.max_tflops
    }

    /// Scans the pending queue in priority order, expiring hopeless tasks and
    /// handing placeable ones to the active strategy.
    fn scan(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let keys: Vec<QueueKey> = self.pending.iter().copied().collect();
        let mut idle_mem = self.idle_memory();
        for key in keys {
            let id = key.id();
            let spec = &self.tasks[id as usize].spec;
            if spec.deadline < self.now + self.min_duration_secs(spec) {
                self.finish_task(id, TaskStatus::Expired, "task_expired");
                continue;
            }
            if self.scheduler.is_none() || idle_mem.is_empty() {
                continue;
            }
            let need = spec.gpus_required as usize;
            let fit = idle_mem.len() - idle_mem.partition_point(|&m| m < spec.mem_per_gpu_gb);
            if fit < need {
                continue;
            }
            if self.decide(id) {
                idle_mem = self.idle_memory();
            }
            if self.aborted || self.scheduler.as_ref().is_some_and(|s| s.abort_requested()) {
                self.aborted = true;
                return;
            }
        }
    }

    fn idle_memory(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.fleet.iter().filter(|g| g.is_idle()).map(|g| g.memory_gb).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn candidates(&self, id: TaskId) -> CandidateSet {
        let spec = &self.tasks[id as usize].spec;
        CandidateSet {
            task_id: id,
            gpu_ids: self
                .fleet
                .iter()
                .filter(|g| is_candidate(spec, g))
                .map(|g| g.id)
                .collect(),
            snapshot_time: self.now,
        }
    }

    /// Runs one strategy decision for a placeable task; true if dispatched.
    fn decide(&mut self, id: TaskId) -> bool {
        let Some(mut scheduler) = self.scheduler.take() else {
            return false;
        };
        let cands = self.candidates(id);
        let choice = {
            let ctx = DecisionContext {
                now: self.now,
                task: &self.tasks[id as usize],
                fleet: &self.fleet,
                network: &self.network,
                pending_len: self.pending.len(),
            };
            scheduler.select(&ctx, &cands, &mut self.scheduling_rng)
        };
        self.scheduler = Some(scheduler);
        match choice {
            Ok(gpus) => match self.dispatch(id, &gpus) {
                Ok(_) => true,
                Err(e) => {
                    warn!("strategy produced an invalid placement for task {id}: {e}");
                    false
                }
            },
            Err(e) => {
                debug!("task {id} requeued: {e}");
                false
            }
        }
    }

    /// Places a pending task on `gpu_ids`, starting data staging.
    pub fn dispatch(&mut self, id: TaskId, gpu_ids: &[GpuId]) -> Result<DispatchReceipt, DispatchError> {
        let task = self.tasks.get(id as usize).ok_or(DispatchError::UnknownTask(id))?;
        if task.status != TaskStatus::Pending || !self.pending.contains(&QueueKey::of(&task.spec)) {
            return Err(DispatchError::NotPending { task: id });
        }
        let spec = task.spec.clone();
        if gpu_ids.len() != spec.gpus_required as usize {
            return Err(DispatchError::WrongCount {
                task: id,
                required: spec.gpus_required,
                given: gpu_ids.len(),
            });
        }
        let mut sorted: Vec<GpuId> = gpu_ids.to_vec();
        sorted.sort_unstable();
        for (i, &g) in sorted.iter().enumerate() {
            let node = self.fleet.get(g as usize).ok_or(DispatchError::GpuRejected {
                gpu: g,
                reason: "unknown GPU",
            })?;
            let reason = if i > 0 && sorted[i - 1] == g {
                Some("duplicate GPU")
            } else if !node.online {
                Some("offline")
            } else if node.busy_task.is_some() {
                Some("busy")
            } else if node.memory_gb < spec.mem_per_gpu_gb {
                Some("insufficient memory")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(DispatchError::GpuRejected { gpu: g, reason });
            }
        }

        let now = self.now;
        let regions: Vec<Region> = sorted.iter().map(|&g| self.fleet[g as usize].region).collect();
        let distinct: BTreeSet<Region> = regions.iter().copied().collect();
        let staging_secs = if spec.data_volume_gb > 0.0 {
            distinct
                .iter()
                .map(|&r| {
                    let bw = self
                        .network
                        .effective_bandwidth(spec.data_region, r, now, &mut self.network_rng);
                    spec.data_volume_gb * 8.0 / bw
                })
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let (p_comm, b_eff) = self.network.comm_penalty(&spec, &regions, now, &mut self.network_rng);
        let nodes: Vec<&GpuNode> = sorted.iter().map(|&g| &self.fleet[g as usize]).collect();
        let compute_hours = execution_time(&spec, &nodes, p_comm);
        let latency = distinct
            .iter()
            .map(|&r| {
                self.network
                    .sample_latency_ms(spec.data_region, r, &mut self.network_rng)
            })
            .fold(0.0, f64::max);
        self.ledger.record_latency(latency);

        let predicted_finish = now + staging_secs + compute_hours * SECS_PER_HOUR;
        let rates: Vec<(f64, Region)> = nodes.iter().map(|g| (g.hourly_cost_usd, g.region)).collect();
        let estimate = cost(
            &spec,
            &rates,
            (predicted_finish - now) / SECS_PER_HOUR,
            spec.data_region.default_egress_per_gb(),
            budget_reference(&spec, &self.config.fleet.catalog),
        );

        for &g in &sorted {
            self.fleet[g as usize].busy_task = Some(id);
        }
        self.pending.remove(&QueueKey::of(&spec));
        let t = &mut self.tasks[id as usize];
        t.assigned_gpus = Some(sorted.clone());
        t.dispatched_at = Some(now);
        t.p_comm = p_comm;
        t.b_eff_gbps = b_eff;
        t.compute_hours = compute_hours;
        let (status, next) = if staging_secs > 0.0 {
            (TaskStatus::Staging, (now + staging_secs, EventKind::StageComplete(id)))
        } else {
            t.started_at = Some(now);
            (
                TaskStatus::Running,
                (now + compute_hours * SECS_PER_HOUR, EventKind::TaskComplete(id)),
            )
        };
        t.status = status;
        self.push(next.0, next.1);
        self.emit(TraceRecord {
            time: now,
            event: "dispatch",
            task_id: Some(id),
            gpu_ids: sorted.clone(),
            status: Some(status),
            reward: None,
            cost_usd: Some(estimate.usd),
            p_comm: Some(p_comm),
            bandwidth_penalty: Some(bandwidth_penalty(b_eff)),
        });
        Ok(DispatchReceipt {
            task_id: id,
            gpu_ids: sorted,
            staging_secs,
            compute_hours,
            p_comm,
            predicted_finish,
            estimated_cost_usd: estimate.usd,
        })
    }

    /// Checks the occupancy and availability invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let busy = self.fleet.iter().filter(|g| g.busy_task.is_some()).count();
        let held: usize = self
            .tasks
            .iter()
            .filter(|t| t.status.is_in_flight())
            .map(|t| t.spec.gpus_required as usize)
            .sum();
        if busy != held {
            return Err(format!("{busy} busy GPUs but in-flight tasks hold {held}"));
        }
        if let Some(g) = self.fleet.iter().find(|g| !g.online && g.busy_task.is_some()) {
            return Err(format!("offline GPU {} still holds a task", g.id));
        }
        for t in self.tasks.iter().filter(|t| t.status.is_in_flight()) {
            let n = t.assigned_gpus.as_ref().map_or(0, Vec::len);
            if n != t.spec.gpus_required as usize {
                return Err(format!("task {} holds {n} GPUs", t.id()));
            }
        }
        Ok(())
    }
}
