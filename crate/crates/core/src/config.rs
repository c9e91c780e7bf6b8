//! Scenario configuration: flat `dotted.key=value` text plus named presets.
//!
//! ```text
//! # comment
//! fleet.n_gpus=64
//! workload.pattern=poisson
//! template.BertFinetune.base_hours=5.5
//! network.phase.AfternoonPeak.bandwidth_multiplier=0.5
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::accounting::RewardWeights;
use crate::error::ConfigError;
use crate::model::{default_catalog, CommPattern, CommProfile, GpuModel, Region};
use crate::network::{validate_phases, NetworkConfig, PhaseName};
use crate::scheduling::SchedulerKind;
use crate::workload::{TaskTemplate, WorkloadConfig, SLACK_CRITICAL, SLACK_NORMAL};

#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub n_gpus: usize,
    pub catalog: Vec<GpuModel>,
    /// Weights aligned with `catalog`.
    pub model_mix: Vec<f64>,
    pub region_mix: [f64; 6],
}

impl Default for FleetConfig {
    fn default() -> Self {
        let catalog = default_catalog();
        let model_mix = catalog.iter().map(|m| m.quantity as f64).collect();
        FleetConfig {
            n_gpus: 64,
            catalog,
            model_mix,
            region_mix: [1.0; 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnConfig {
    pub dropout_multiplier: f64,
    /// Per-GPU base failure rates are drawn uniformly from this range (per hour).
    pub dropout_min: f64,
    pub dropout_max: f64,
    pub mean_downtime_hours: f64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            dropout_multiplier: 1.0,
            dropout_min: 0.005,
            dropout_max: 0.05,
            mean_downtime_hours: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub fleet: FleetConfig,
    pub workload: WorkloadConfig,
    pub network: NetworkConfig,
    pub churn: ChurnConfig,
    pub reward: RewardWeights,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub scheduling_tick_secs: f64,
    pub agent_timeout_secs: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            fleet: FleetConfig::default(),
            workload: WorkloadConfig::default(),
            network: NetworkConfig::default(),
            churn: ChurnConfig::default(),
            reward: RewardWeights::default(),
            scheduler: SchedulerKind::Greedy,
            seed: 1,
            scheduling_tick_secs: 60.0,
            agent_timeout_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Small,
    Large,
    StressDropout,
    StressCongestion,
}

impl Preset {
    pub const SMALL_TASK_LOADS: [usize; 5] = [100, 200, 400, 700, 1000];
    pub const DROPOUT_MULTIPLIERS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
    pub const CONGESTION_MULTIPLIERS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Large => "large",
            Preset::StressDropout => "stress-dropout",
            Preset::StressCongestion => "stress-congestion",
        }
    }

    pub fn config(self) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        match self {
            Preset::Small | Preset::StressDropout | Preset::StressCongestion => {
                c.fleet.n_gpus = 64;
                c.workload.n_tasks = 400;
            }
            Preset::Large => {
                c.fleet.n_gpus = 1000;
                c.workload.n_tasks = 5000;
            }
        }
        c
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            "stress-dropout" => Ok(Preset::StressDropout),
            "stress-congestion" => Ok(Preset::StressCongestion),
            _ => Err(ConfigError::UnknownPreset(s.to_string())),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::invalid(key, format!("cannot parse {value:?}")))
}

/// Parses `name:weight,name:weight`.
fn weighted_list(key: &str, value: &str) -> Result<Vec<(String, f64)>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, w) = item
                .rsplit_once(':')
                .ok_or_else(|| ConfigError::invalid(key, format!("expected name:weight, got {item:?}")))?;
            Ok((name.trim().to_string(), num(key, w)?))
        })
        .collect()
}

fn region_weights(key: &str, value: &str) -> Result<[f64; 6], ConfigError> {
    let mut w = [0.0; 6];
    for (name, weight) in weighted_list(key, value)? {
        w[name.parse::<Region>()?.index()] = weight;
    }
    Ok(w)
}

fn phase_name(s: &str) -> Option<PhaseName> {
    [
        PhaseName::OvernightBatch,
        PhaseName::MorningSession,
        PhaseName::AfternoonPeak,
        PhaseName::Evening,
    ]
    .into_iter()
    .find(|p| p.as_str().eq_ignore_ascii_case(s))
}

fn blank_template(name: &str) -> TaskTemplate {
    TaskTemplate {
        name: name.to_string(),
        base_hours: 1.0,
        gpus_required: 1,
        mem_per_gpu_gb: 0.0,
        comm: CommProfile {
            pattern: CommPattern::PointToPoint,
            intensity: 0.0,
        },
        data_volume_gb: 0.0,
        critical_probability: 0.0,
        slack_critical: SLACK_CRITICAL,
        slack_normal: SLACK_NORMAL,
    }
}

fn range(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| ConfigError::invalid(key, "expected lo,hi"))?;
    Ok((num(key, lo)?, num(key, hi)?))
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Ok(name.parse::<Preset>()?.config())
    }

    pub fn horizon_hours(&self) -> f64 {
        self.workload.horizon_hours
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let parts: Vec<&str> = key.trim().split('.').collect();
        match parts.as_slice() {
            ["seed"] => self.seed = num(key, value)?,
            ["scheduler"] => self.scheduler = value.parse()?,
            ["horizon_hours"] | ["workload", "horizon_hours"] => self.workload.horizon_hours = num(key, value)?,
            ["sim", "scheduling_tick_secs"] => self.scheduling_tick_secs = num(key, value)?,
            ["agent", "timeout_secs"] => self.agent_timeout_secs = num(key, value)?,

            ["fleet", "n_gpus"] => self.fleet.n_gpus = num(key, value)?,
            ["fleet", "region_mix"] => self.fleet.region_mix = region_weights(key, value)?,
            ["fleet", "model_mix"] => {
                let mut mix = vec![0.0; self.fleet.catalog.len()];
                for (name, w) in weighted_list(key, value)? {
                    let i = self
                        .fleet
                        .catalog
                        .iter()
                        .position(|m| m.name.eq_ignore_ascii_case(&name))
                        .ok_or_else(|| ConfigError::invalid(key, format!("unknown GPU model {name:?}")))?;
                    mix[i] = w;
                }
                self.fleet.model_mix = mix;
            }
            ["fleet", "model", name, field] => {
                let i = match self
                    .fleet
                    .catalog
                    .iter()
                    .position(|m| m.name.eq_ignore_ascii_case(name))
                {
                    Some(i) => i,
                    None => {
                        self.fleet.catalog.push(GpuModel {
                            name: name.to_string(),
                            memory_gb: 1.0,
                            tflops: 1.0,
                            quantity: 0,
                            hourly_cost_usd: 0.0,
                        });
                        self.fleet.model_mix.push(0.0);
                        self.fleet.catalog.len() - 1
                    }
                };
                let m = &mut self.fleet.catalog[i];
                match *field {
                    "memory_gb" => m.memory_gb = num(key, value)?,
                    "tflops" => m.tflops = num(key, value)?,
                    "hourly_cost_usd" => m.hourly_cost_usd = num(key, value)?,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }

            ["workload", "pattern"] => self.workload.pattern = value.parse()?,
            ["workload", "n_tasks"] => self.workload.n_tasks = num(key, value)?,
            ["workload", "region_weights"] => self.workload.region_weights = region_weights(key, value)?,
            ["workload", "templates_file"] => self.load_templates(Path::new(value))?,
            ["workload", "sin_amplitude"] => self.workload.params.sin_amplitude = num(key, value)?,
            ["workload", "sin_period_hours"] => self.workload.params.sin_period_hours = num(key, value)?,
            ["workload", "bursts_per_day"] => self.workload.params.bursts_per_day = num(key, value)?,
            ["workload", "burst_share"] => self.workload.params.burst_share = num(key, value)?,
            ["workload", "burst_width_hours"] => self.workload.params.burst_width_hours = num(key, value)?,
            ["workload", "background_fraction"] => self.workload.params.background_fraction = num(key, value)?,

            ["template", name, field] => {
                let idx = match self.workload.templates.iter().position(|t| t.name == *name) {
                    Some(i) => i,
                    None => {
                        self.workload.templates.push(blank_template(name));
                        self.workload.templates.len() - 1
                    }
                };
                let t = &mut self.workload.templates[idx];
                match *field {
                    "base_hours" => t.base_hours = num(key, value)?,
                    "gpus_required" => t.gpus_required = num(key, value)?,
                    "mem_per_gpu_gb" => t.mem_per_gpu_gb = num(key, value)?,
                    "comm_profile" => t.comm.pattern = value.parse()?,
                    "comm_intensity" => t.comm.intensity = num(key, value)?,
                    "data_volume_gb" => t.data_volume_gb = num(key, value)?,
                    "critical_probability" => t.critical_probability = num(key, value)?,
                    "slack_critical" => t.slack_critical = range(key, value)?,
                    "slack_normal" => t.slack_normal = range(key, value)?,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }

            ["network", "inter_bandwidth_gbps"] => self.network.inter_bandwidth_gbps = num(key, value)?,
            ["network", "intra_bandwidth_gbps"] => self.network.intra_bandwidth_gbps = num(key, value)?,
            ["network", "bandwidth_noise"] => self.network.bandwidth_noise = num(key, value)?,
            ["network", "p_cong"] => self.network.p_cong = num(key, value)?,
            ["network", "congestion_multiplier"] => self.network.congestion_multiplier = num(key, value)?,
            ["network", "congestion_mean_minutes"] => {
                self.network.congestion_mean_secs = num::<f64>(key, value)? * 60.0
            }
            ["network", "congestion_factor_range"] => self.network.congestion_factor_range = range(key, value)?,
            ["network", "phase", name, field] => {
                let pn = phase_name(name).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
                let p = self
                    .network
                    .phases
                    .iter_mut()
                    .find(|p| p.name == pn)
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
                match *field {
                    "start_hour" => p.start_hour = num(key, value)?,
                    "end_hour" => p.end_hour = num(key, value)?,
                    "bandwidth_multiplier" => p.bandwidth_multiplier = num(key, value)?,
                    "arrival_weight" => p.arrival_weight = num(key, value)?,
                    "mix" => p.task_mix = weighted_list(key, value)?,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }

            ["churn", "dropout_multiplier"] => self.churn.dropout_multiplier = num(key, value)?,
            ["churn", "dropout_min"] => self.churn.dropout_min = num(key, value)?,
            ["churn", "dropout_max"] => self.churn.dropout_max = num(key, value)?,
            ["churn", "dropout"] => {
                let d = num(key, value)?;
                self.churn.dropout_min = d;
                self.churn.dropout_max = d;
            }
            ["churn", "mean_downtime_hours"] => self.churn.mean_downtime_hours = num(key, value)?,

            ["reward", "w_comp"] => self.reward.w_comp = num(key, value)?,
            ["reward", "w_deadline"] => self.reward.w_deadline = num(key, value)?,
            ["reward", "w_fail"] => self.reward.w_fail = num(key, value)?,
            ["reward", "w_cost"] => self.reward.w_cost = num(key, value)?,
            ["reward", "w_comm"] => self.reward.w_comm = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Loads `template.*` keys from a separate file into the library.
    pub fn load_templates(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            if !k.trim().starts_with("template.") {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: format!("template files only accept template.* keys, got {k:?}"),
                });
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.fleet;
        if f.n_gpus == 0 {
            return Err(ConfigError::invalid("fleet.n_gpus", "fleet is empty"));
        }
        if f.catalog.is_empty() || f.catalog.len() != f.model_mix.len() {
            return Err(ConfigError::invalid(
                "fleet.model_mix",
                "model mix does not match catalog",
            ));
        }
        if f.model_mix.iter().any(|w| !(*w >= 0.0)) || f.model_mix.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::invalid(
                "fleet.model_mix",
                "need non-negative weights with a positive sum",
            ));
        }
        if f.catalog
            .iter()
            .any(|m| !(m.tflops > 0.0 && m.memory_gb > 0.0 && m.hourly_cost_usd >= 0.0))
        {
            return Err(ConfigError::invalid("fleet.model", "model attributes out of range"));
        }
        if f.region_mix.iter().any(|w| !(*w >= 0.0)) || f.region_mix.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::invalid(
                "fleet.region_mix",
                "need non-negative weights with a positive sum",
            ));
        }
        self.workload.validate(&self.network.phases)?;
        let n = &self.network;
        validate_phases(&n.phases).map_err(|r| ConfigError::invalid("network.phase", r))?;
        if !(n.inter_bandwidth_gbps > 0.0 && n.intra_bandwidth_gbps > 0.0) {
            return Err(ConfigError::invalid("network.bandwidth", "bandwidths must be positive"));
        }
        if !(0.0..1.0).contains(&n.bandwidth_noise) {
            return Err(ConfigError::invalid("network.bandwidth_noise", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&n.p_cong) || !(n.congestion_multiplier >= 0.0) {
            return Err(ConfigError::invalid("network.p_cong", "probability out of range"));
        }
        let (lo, hi) = n.congestion_factor_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) || !(n.congestion_mean_secs > 0.0) {
            return Err(ConfigError::invalid(
                "network.congestion",
                "congestion shape out of range",
            ));
        }
        let c = &self.churn;
        if !(c.dropout_min >= 0.0 && c.dropout_min <= c.dropout_max && c.dropout_multiplier >= 0.0) {
            return Err(ConfigError::invalid("churn", "dropout rates out of range"));
        }
        if !(c.mean_downtime_hours >= 0.0) {
            return Err(ConfigError::invalid(
                "churn.mean_downtime_hours",
                "must be non-negative",
            ));
        }
        let w = &self.reward;
        if ![w.w_comp, w.w_deadline, w.w_fail, w.w_cost, w.w_comm]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(ConfigError::invalid("reward", "weights must be finite"));
        }
        if !(self.scheduling_tick_secs > 0.0) {
            return Err(ConfigError::invalid("sim.scheduling_tick_secs", "must be positive"));
        }
        if !(self.agent_timeout_secs > 0.0) {
            return Err(ConfigError::invalid("agent.timeout_secs", "must be positive"));
        }
        Ok(())
    }

    /// One-line summary used when echoing a failing sweep member.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "scheduler={} seed={} fleet.n_gpus={} workload.pattern={} workload.n_tasks={} horizon_hours={} churn.dropout_multiplier={} network.congestion_multiplier={}",
            self.scheduler,
            self.seed,
            self.fleet.n_gpus,
            self.workload.pattern.as_str(),
            self.workload.n_tasks,
            self.workload.horizon_hours,
            self.churn.dropout_multiplier,
            self.network.congestion_multiplier,
        );
        s
    }
}
