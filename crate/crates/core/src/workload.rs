//! Task templates and the arrival-pattern generators.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{CommPattern, CommProfile, Region, TaskSpec};
use crate::network::DiurnalPhase;
use crate::rng::{stream, Stream};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub name: String,
    pub base_hours: f64,
    pub gpus_required: u32,
    pub mem_per_gpu_gb: f64,
    pub comm: CommProfile,
    pub data_volume_gb: f64,
    pub critical_probability: f64,
    pub slack_critical: (f64, f64),
    pub slack_normal: (f64, f64),
}

impl TaskTemplate {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let key = format!("template.{}", self.name);
        let bad = |r: &str| Err(ConfigError::invalid(&key, r));
        if !(self.base_hours > 0.0) {
            return bad("base_hours must be positive");
        }
        if self.gpus_required == 0 {
            return bad("gpus_required must be positive");
        }
        if !(self.mem_per_gpu_gb >= 0.0) || !(self.data_volume_gb >= 0.0) {
            return bad("memory and data volume must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.comm.intensity) {
            return bad("comm intensity must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.critical_probability) {
            return bad("critical_probability must lie in [0, 1]");
        }
        for (lo, hi) in [self.slack_critical, self.slack_normal] {
            if !(lo > 1.0 && hi >= lo) {
                return bad("slack ranges need 1 < lo <= hi");
            }
        }
        Ok(())
    }
}

pub const SLACK_CRITICAL: (f64, f64) = (1.5, 2.5);
pub const SLACK_NORMAL: (f64, f64) = (2.0, 4.0);

pub fn default_templates() -> Vec<TaskTemplate> {
    let t = |name: &str, base_hours, gpus_required, mem, pattern, intensity, data, crit| TaskTemplate {
        name: name.to_string(),
        base_hours,
        gpus_required,
        mem_per_gpu_gb: mem,
        comm: CommProfile { pattern, intensity },
        data_volume_gb: data,
        critical_probability: crit,
        slack_critical: SLACK_CRITICAL,
        slack_normal: SLACK_NORMAL,
    };
    vec![
        t(
            "CriticalInference",
            0.1,
            1,
            10.0,
            CommPattern::PointToPoint,
            0.0,
            0.5,
            0.9,
        ),
        t("BertFinetune", 6.0, 1, 12.0, CommPattern::ComputeHeavy, 0.1, 5.0, 0.2),
        t(
            "Llama7bFinetune",
            12.0,
            16,
            24.0,
            CommPattern::AllReduce,
            0.8,
            30.0,
            0.1,
        ),
        t("ResNetTraining", 12.0, 32, 16.0, CommPattern::Ring, 0.9, 150.0, 0.1),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternKind {
    Phased,
    Uniform,
    Sinusoidal,
    Bursty,
    Poisson,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::Phased,
        PatternKind::Uniform,
        PatternKind::Sinusoidal,
        PatternKind::Bursty,
        PatternKind::Poisson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::Phased => "phased",
            PatternKind::Uniform => "uniform",
            PatternKind::Sinusoidal => "sinusoidal",
            PatternKind::Bursty => "bursty",
            PatternKind::Poisson => "poisson",
        }
    }
}

impl FromStr for PatternKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::invalid("workload.pattern", format!("unknown pattern {s:?}")))
    }
}

/// Shape parameters for the non-phased patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub sin_amplitude: f64,
    pub sin_period_hours: f64,
    pub bursts_per_day: u32,
    /// Expected burst size as a fraction of the nominal daily volume.
    pub burst_share: f64,
    pub burst_width_hours: f64,
    /// Background rate as a fraction of the nominal rate.
    pub background_fraction: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            sin_amplitude: 0.8,
            sin_period_hours: 24.0,
            bursts_per_day: 3,
            burst_share: 0.2,
            burst_width_hours: 0.5,
            background_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub pattern: PatternKind,
    pub n_tasks: usize,
    pub horizon_hours: f64,
    pub templates: Vec<TaskTemplate>,
    pub region_weights: [f64; 6],
    pub params: PatternParams,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            pattern: PatternKind::Phased,
            n_tasks: 100,
            horizon_hours: 24.0,
            templates: default_templates(),
            region_weights: [1.0; 6],
            params: PatternParams::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn template(&self, name: &str) -> Option<&TaskTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn validate(&self, phases: &[DiurnalPhase]) -> Result<(), ConfigError> {
        if !(self.horizon_hours >= 24.0) {
            return Err(ConfigError::invalid("workload.horizon_hours", "must be at least 24"));
        }
        if self.templates.is_empty() {
            return Err(ConfigError::invalid("workload.templates", "template library is empty"));
        }
        for t in &self.templates {
            t.validate()?;
        }
        if self.region_weights.iter().any(|w| !(*w >= 0.0)) || self.region_weights.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::invalid(
                "workload.region_weights",
                "need non-negative weights with a positive sum",
            ));
        }
        if self.pattern == PatternKind::Phased {
            for p in phases {
                for (name, w) in &p.task_mix {
                    if self.template(name).is_none() {
                        return Err(ConfigError::invalid(
                            "network.phase.mix",
                            format!("phase {} references unknown template {name:?}", p.name.as_str()),
                        ));
                    }
                    if !(*w >= 0.0) {
                        return Err(ConfigError::invalid("network.phase.mix", "negative weight"));
                    }
                }
            }
        }
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.sin_amplitude) || !(p.sin_period_hours > 0.0) {
            return Err(ConfigError::invalid(
                "workload.sin_amplitude",
                "amplitude must lie in [0, 1]",
            ));
        }
        if !(p.burst_width_hours > 0.0 && p.burst_width_hours < 24.0) || !(p.background_fraction >= 0.0) {
            return Err(ConfigError::invalid(
                "workload.burst_width_hours",
                "burst shape out of range",
            ));
        }
        Ok(())
    }
}

/// Deadline for a task given its slack multiplier on the reference duration.
pub fn deadline_for(arrival: SimTime, base_hours: f64, slack: f64) -> SimTime {
    arrival + slack * base_hours * 3600.0
}

/// Draws the criticality-dependent slack and returns the absolute deadline.
pub fn assign_deadline<R: Rng>(template: &TaskTemplate, critical: bool, arrival: SimTime, rng: &mut R) -> SimTime {
    let (lo, hi) = if critical {
        template.slack_critical
    } else {
        template.slack_normal
    };
    let slack = rng.random_range(lo..=hi);
    deadline_for(arrival, template.base_hours, slack)
}

/// Integral of the sinusoidal intensity shape over [0, horizon] hours.
fn sinusoid_mass(params: &PatternParams, horizon: f64) -> f64 {
    let w = 2.0 * PI / params.sin_period_hours;
    horizon + params.sin_amplitude / w * (1.0 - (w * horizon).cos())
}

/// (start hour, covered fraction of the day) for each day touching the horizon.
fn day_spans(horizon: f64) -> Vec<(f64, f64)> {
    let days = (horizon / 24.0).ceil() as usize;
    (0..days)
        .map(|d| {
            let start = d as f64 * 24.0;
            (start, ((horizon - start) / 24.0).min(1.0))
        })
        .collect()
}

fn bursty_base_rate(params: &PatternParams, n: f64, horizon: f64) -> f64 {
    let covered: f64 = day_spans(horizon).iter().map(|(_, f)| f).sum();
    let mass =
        params.background_fraction * horizon + params.bursts_per_day as f64 * params.burst_share * 24.0 * covered;
    n / mass
}

fn arrivals<R: Rng>(config: &WorkloadConfig, phases: &[DiurnalPhase], rng: &mut R) -> Vec<(f64, Option<usize>)> {
    let n = config.n_tasks;
    let h = config.horizon_hours;
    let p = &config.params;
    let mut out: Vec<(f64, Option<usize>)> = Vec::new();
    if n == 0 {
        return out;
    }
    match config.pattern {
        PatternKind::Phased => {
            let mut segments: Vec<(f64, f64, usize)> = Vec::new();
            for (day_start, _) in day_spans(h) {
                for (pi, ph) in phases.iter().enumerate() {
                    let s = day_start + ph.start_hour;
                    let e = (day_start + ph.end_hour).min(h);
                    if e > s {
                        segments.push((s, e, pi));
                    }
                }
            }
            let weights: Vec<f64> = segments
                .iter()
                .map(|&(s, e, pi)| phases[pi].arrival_weight * (e - s))
                .collect();
            let pick = WeightedIndex::new(&weights).expect("positive phase weights");
            for _ in 0..n {
                let (s, e, pi) = segments[pick.sample(rng)];
                out.push((rng.random_range(s..e), Some(pi)));
            }
        }
        PatternKind::Uniform => {
            for _ in 0..n {
                out.push((rng.random_range(0.0..h), None));
            }
        }
        PatternKind::Poisson => {
            let gap = Exp::new(n as f64 / h).expect("positive rate");
            let mut t = gap.sample(rng);
            while t < h {
                out.push((t, None));
                t += gap.sample(rng);
            }
        }
        PatternKind::Sinusoidal => {
            let base = n as f64 / sinusoid_mass(p, h);
            let peak = base * (1.0 + p.sin_amplitude);
            let gap = Exp::new(peak).expect("positive rate");
            let w = 2.0 * PI / p.sin_period_hours;
            let mut t = gap.sample(rng);
            while t < h {
                let accept = (1.0 + p.sin_amplitude * (w * t).sin()) / (1.0 + p.sin_amplitude);
                if rng.random::<f64>() < accept {
                    out.push((t, None));
                }
                t += gap.sample(rng);
            }
        }
        PatternKind::Bursty => {
            let base = bursty_base_rate(p, n as f64, h);
            if p.background_fraction > 0.0 {
                let gap = Exp::new(base * p.background_fraction).expect("positive rate");
                let mut t = gap.sample(rng);
                while t < h {
                    out.push((t, None));
                    t += gap.sample(rng);
                }
            }
            for (day_start, frac) in day_spans(h) {
                let span = frac * 24.0;
                let mean = p.burst_share * 24.0 * base * frac;
                for _ in 0..p.bursts_per_day {
                    let width = p.burst_width_hours.min(span);
                    let start = day_start + rng.random_range(0.0..=(span - width));
                    let count = if mean > 0.0 {
                        Poisson::new(mean).expect("positive mean").sample(rng) as usize
                    } else {
                        0
                    };
                    for _ in 0..count {
                        let t: f64 = start + rng.random_range(0.0..width);
                        out.push((t.min(h * (1.0 - f64::EPSILON)), None));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Generates the full arrival-ordered task list for a scenario.
pub fn generate(config: &WorkloadConfig, phases: &[DiurnalPhase], seed: u64) -> Vec<TaskSpec> {
    let mut rng = stream(seed, Stream::Workload);
    generate_with(config, phases, &mut rng)
}

pub fn generate_with<R: Rng>(config: &WorkloadConfig, phases: &[DiurnalPhase], rng: &mut R) -> Vec<TaskSpec> {
    let times = arrivals(config, phases, rng);
    let uniform_pick = WeightedIndex::new(vec![1.0; config.templates.len()]).expect("non-empty library");
    let regions = WeightedIndex::new(config.region_weights).expect("validated region weights");
    let phase_mixes: Vec<Option<(WeightedIndex<f64>, Vec<usize>)>> = phases
        .iter()
        .map(|ph| {
            let idx: Vec<usize> = ph
                .task_mix
                .iter()
                .filter_map(|(name, _)| config.templates.iter().position(|t| &t.name == name))
                .collect();
            let w: Vec<f64> = ph.task_mix.iter().map(|(_, w)| *w).collect();
            WeightedIndex::new(w).ok().map(|d| (d, idx))
        })
        .collect();

    times
        .into_iter()
        .enumerate()
        .map(|(i, (hour, phase))| {
            let ti = match phase.and_then(|pi| phase_mixes[pi].as_ref()) {
                Some((dist, idx)) => idx[dist.sample(rng)],
                None => uniform_pick.sample(rng),
            };
            let tpl = &config.templates[ti];
            let critical = if config.pattern == PatternKind::Uniform {
                rng.random_bool(0.5)
            } else {
                rng.random_bool(tpl.critical_probability)
            };
            let data_region = Region::ALL[regions.sample(rng)];
            let arrival = SimTime::from_hours(hour);
            let deadline = assign_deadline(tpl, critical, arrival, rng);
            TaskSpec {
                id: i as u64,
                template_name: tpl.name.clone(),
                gpus_required: tpl.gpus_required,
                mem_per_gpu_gb: tpl.mem_per_gpu_gb,
                base_hours: tpl.base_hours,
                arrival,
                deadline,
                critical,
                comm: tpl.comm,
                data_region,
                data_volume_gb: tpl.data_volume_gb,
            }
        })
        .collect()
}
