//! Region graph: static latency table, diurnal bandwidth phases, stochastic
//! congestion on inter-region links, and the communication penalty.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::model::{CommPattern, Region, TaskSpec};
use crate::time::{SimTime, SECS_PER_HOUR};

/// Bandwidth at which communication costs nothing extra, Gbps.
pub const B_REF_GBPS: f64 = 10.0;
pub const P_COMM_MAX: f64 = 5.0;
pub const INTRA_LATENCY_MS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseName {
    OvernightBatch,
    MorningSession,
    AfternoonPeak,
    Evening,
}

impl PhaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::OvernightBatch => "OvernightBatch",
            PhaseName::MorningSession => "MorningSession",
            PhaseName::AfternoonPeak => "AfternoonPeak",
            PhaseName::Evening => "Evening",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalPhase {
    pub name: PhaseName,
    pub start_hour: f64,
    pub end_hour: f64,
    pub bandwidth_multiplier: f64,
    pub arrival_weight: f64,
    /// (template name, weight) pairs.
    pub task_mix: Vec<(String, f64)>,
}

impl DiurnalPhase {
    pub fn contains(&self, hour_of_day: f64) -> bool {
        hour_of_day >= self.start_hour && hour_of_day < self.end_hour
    }

    pub fn len_hours(&self) -> f64 {
        self.end_hour - self.start_hour
    }
}

fn mix(entries: &[(&str, f64)]) -> Vec<(String, f64)> {
    entries.iter().map(|(n, w)| (n.to_string(), *w)).collect()
}

/// Default daily cycle, ordered by start hour.
pub fn default_phases() -> Vec<DiurnalPhase> {
    vec![
        DiurnalPhase {
            name: PhaseName::OvernightBatch,
            start_hour: 0.0,
            end_hour: 6.0,
            bandwidth_multiplier: 1.2,
            arrival_weight: 0.6,
            task_mix: mix(&[
                ("CriticalInference", 0.10),
                ("BertFinetune", 0.20),
                ("Llama7bFinetune", 0.35),
                ("ResNetTraining", 0.35),
            ]),
        },
        DiurnalPhase {
            name: PhaseName::MorningSession,
            start_hour: 6.0,
            end_hour: 12.0,
            bandwidth_multiplier: 1.0,
            arrival_weight: 1.0,
            task_mix: mix(&[
                ("CriticalInference", 0.40),
                ("BertFinetune", 0.40),
                ("Llama7bFinetune", 0.10),
                ("ResNetTraining", 0.10),
            ]),
        },
        DiurnalPhase {
            name: PhaseName::AfternoonPeak,
            start_hour: 12.0,
            end_hour: 18.0,
            bandwidth_multiplier: 0.6,
            arrival_weight: 1.4,
            task_mix: mix(&[
                ("CriticalInference", 0.60),
                ("BertFinetune", 0.30),
                ("Llama7bFinetune", 0.05),
                ("ResNetTraining", 0.05),
            ]),
        },
        DiurnalPhase {
            name: PhaseName::Evening,
            start_hour: 18.0,
            end_hour: 24.0,
            bandwidth_multiplier: 0.8,
            arrival_weight: 1.0,
            task_mix: mix(&[
                ("CriticalInference", 0.40),
                ("BertFinetune", 0.30),
                ("Llama7bFinetune", 0.15),
                ("ResNetTraining", 0.15),
            ]),
        },
    ]
}

/// Checks that the windows partition [0, 24) and multipliers are in range.
pub fn validate_phases(phases: &[DiurnalPhase]) -> Result<(), String> {
    if phases.is_empty() {
        return Err("phase table is empty".into());
    }
    let mut sorted: Vec<&DiurnalPhase> = phases.iter().collect();
    sorted.sort_by(|a, b| a.start_hour.total_cmp(&b.start_hour));
    let mut cursor = 0.0;
    for p in sorted {
        if p.start_hour != cursor || p.end_hour <= p.start_hour {
            return Err(format!(
                "phase {} does not continue the partition at {cursor}",
                p.name.as_str()
            ));
        }
        if !(0.4..=1.2).contains(&p.bandwidth_multiplier) {
            return Err(format!(
                "phase {} bandwidth multiplier outside [0.4, 1.2]",
                p.name.as_str()
            ));
        }
        if p.arrival_weight <= 0.0 {
            return Err(format!("phase {} arrival weight must be positive", p.name.as_str()));
        }
        cursor = p.end_hour;
    }
    if cursor != 24.0 {
        return Err("phase windows do not cover [0, 24)".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub inter_bandwidth_gbps: f64,
    pub intra_bandwidth_gbps: f64,
    /// Half-width of the multiplicative per-query noise band.
    pub bandwidth_noise: f64,
    pub p_cong: f64,
    pub congestion_multiplier: f64,
    pub congestion_factor_range: (f64, f64),
    pub congestion_mean_secs: f64,
    pub phases: Vec<DiurnalPhase>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            inter_bandwidth_gbps: 1.0,
            intra_bandwidth_gbps: 10.0,
            bandwidth_noise: 0.05,
            p_cong: 0.02,
            congestion_multiplier: 1.0,
            congestion_factor_range: (0.1, 0.5),
            congestion_mean_secs: 1800.0,
            phases: default_phases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub a: Region,
    pub b: Region,
    pub base_latency_ms: f64,
    pub base_bandwidth_gbps: f64,
    pub congestion_factor: f64,
    pub congestion_until: Option<SimTime>,
}

impl LinkState {
    fn factor_at(&self, t: SimTime) -> f64 {
        match self.congestion_until {
            Some(until) if t < until => self.congestion_factor,
            _ => 1.0,
        }
    }
}

/// A congestion episode drawn for one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Congestion {
    pub a: Region,
    pub b: Region,
    pub factor: f64,
    pub start: SimTime,
    pub until: SimTime,
}

pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0;
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

/// Latency formula for one inter-region pair: 1 ms per 100 km plus jitter.
pub fn latency_from_distance(distance_km: f64, jitter_ms: f64) -> f64 {
    distance_km / 100.0 + jitter_ms
}

/// Clamped penalty from critical-link bandwidth and communication intensity.
pub fn penalty_from_bandwidth(intensity: f64, b_eff_gbps: f64) -> f64 {
    if !b_eff_gbps.is_finite() {
        return 1.0;
    }
    (1.0 + intensity * (B_REF_GBPS / b_eff_gbps - 1.0)).clamp(1.0, P_COMM_MAX)
}

/// Fraction of the reference bandwidth missing on the critical link, in [0, 1].
pub fn bandwidth_penalty(b_eff_gbps: f64) -> f64 {
    if !b_eff_gbps.is_finite() {
        return 0.0;
    }
    (1.0 - b_eff_gbps / B_REF_GBPS).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    config: NetworkConfig,
    latency: [[f64; 6]; 6],
    links: Vec<LinkState>,
    congestion_events: u64,
}

fn link_slot(a: Region, b: Region) -> (usize, usize) {
    let (i, j) = (a.index(), b.index());
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl NetworkModel {
    /// Builds the region graph and draws the static latency jitter.
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Self {
        let mut latency = [[INTRA_LATENCY_MS; 6]; 6];
        let mut links = Vec::new();
        for (i, a) in Region::ALL.into_iter().enumerate() {
            for b in Region::ALL.into_iter().skip(i + 1) {
                let jitter = rng.random_range(0.0..=10.0);
                let ms = latency_from_distance(great_circle_km(a.coordinates(), b.coordinates()), jitter);
                latency[a.index()][b.index()] = ms;
                latency[b.index()][a.index()] = ms;
                links.push(LinkState {
                    a,
                    b,
                    base_latency_ms: ms,
                    base_bandwidth_gbps: config.inter_bandwidth_gbps,
                    congestion_factor: 1.0,
                    congestion_until: None,
                });
            }
        }
        NetworkModel {
            config,
            latency,
            links,
            congestion_events: 0,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn links(&self) -> &[LinkState] {
        &self.links
    }

    pub fn congestion_events(&self) -> u64 {
        self.congestion_events
    }

    fn link_index(&self, a: Region, b: Region) -> Option<usize> {
        let (i, j) = link_slot(a, b);
        if i == j {
            return None;
        }
        // Row-major upper triangle of a 6x6 matrix.
        Some(i * 6 - i * (i + 1) / 2 + (j - i - 1))
    }

    pub fn link(&self, a: Region, b: Region) -> Option<&LinkState> {
        self.link_index(a, b).map(|i| &self.links[i])
    }

    pub fn base_latency_ms(&self, a: Region, b: Region) -> f64 {
        self.latency[a.index()][b.index()]
    }

    /// Base latency with the per-sample noise band applied.
    pub fn sample_latency_ms<R: Rng>(&self, a: Region, b: Region, rng: &mut R) -> f64 {
        self.base_latency_ms(a, b) * self.noise(rng)
    }

    pub fn phase_at(&self, t: SimTime) -> &DiurnalPhase {
        let h = t.hour_of_day();
        self.config
            .phases
            .iter()
            .find(|p| p.contains(h))
            .unwrap_or(&self.config.phases[0])
    }

    pub fn congestion_factor(&self, a: Region, b: Region, t: SimTime) -> f64 {
        self.link(a, b).map_or(1.0, |l| l.factor_at(t))
    }

    pub fn intra_bandwidth_gbps(&self) -> f64 {
        self.config.intra_bandwidth_gbps
    }

    /// Noise-free bandwidth between two regions at time `t`.
    pub fn expected_bandwidth(&self, a: Region, b: Region, t: SimTime) -> f64 {
        match self.link(a, b) {
            None => self.config.intra_bandwidth_gbps,
            Some(l) => l.base_bandwidth_gbps * self.phase_at(t).bandwidth_multiplier * l.factor_at(t),
        }
    }

    fn noise<R: Rng>(&self, rng: &mut R) -> f64 {
        let n = self.config.bandwidth_noise;
        if n > 0.0 {
            rng.random_range(1.0 - n..=1.0 + n)
        } else {
            1.0
        }
    }

    pub fn effective_bandwidth<R: Rng>(&self, a: Region, b: Region, t: SimTime, rng: &mut R) -> f64 {
        self.expected_bandwidth(a, b, t) * self.noise(rng)
    }

    pub fn fraction_congested(&self, t: SimTime) -> f64 {
        if self.links.is_empty() {
            return 0.0;
        }
        let n = self.links.iter().filter(|l| l.factor_at(t) < 1.0).count();
        n as f64 / self.links.len() as f64
    }

    /// One hourly Bernoulli draw per inter-region link. Returned episodes are
    /// not applied; pass them to [`NetworkModel::start_congestion`].
    pub fn draw_congestion<R: Rng>(&mut self, t: SimTime, rng: &mut R) -> Vec<Congestion> {
        let p = (self.config.p_cong * self.config.congestion_multiplier).clamp(0.0, 1.0);
        if p == 0.0 {
            return Vec::new();
        }
        let (lo, hi) = self.config.congestion_factor_range;
        let duration = Exp::new(1.0 / self.config.congestion_mean_secs).expect("positive mean");
        let mut out = Vec::new();
        for l in &self.links {
            if rng.random::<f64>() < p {
                let factor = rng.random_range(lo..=hi);
                let secs: f64 = duration.sample(rng);
                out.push(Congestion {
                    a: l.a,
                    b: l.b,
                    factor,
                    start: t,
                    until: t + secs,
                });
            }
        }
        self.congestion_events += out.len() as u64;
        out
    }

    /// Applies an episode; overlapping episodes keep the minimum factor and
    /// the latest end.
    pub fn start_congestion(&mut self, c: &Congestion) {
        let Some(i) = self.link_index(c.a, c.b) else {
            return;
        };
        let link = &mut self.links[i];
        match link.congestion_until {
            Some(until) if c.start < until => {
                link.congestion_factor = link.congestion_factor.min(c.factor);
                link.congestion_until = Some(until.max(c.until));
            }
            _ => {
                link.congestion_factor = c.factor;
                link.congestion_until = Some(c.until);
            }
        }
    }

    /// Clears the link's congestion if no later episode extended it.
    pub fn end_congestion(&mut self, a: Region, b: Region, t: SimTime) {
        let Some(i) = self.link_index(a, b) else {
            return;
        };
        let link = &mut self.links[i];
        if let Some(until) = link.congestion_until {
            if until <= t {
                link.congestion_factor = 1.0;
                link.congestion_until = None;
            }
        }
    }

    /// Minimum bandwidth over the task's critical links given the regions of
    /// its GPUs in ascending GPU-id order. Infinite when there is no link to
    /// cross.
    pub fn critical_bandwidth<R: Rng>(&self, task: &TaskSpec, gpu_regions: &[Region], t: SimTime, rng: &mut R) -> f64 {
        let mut pairs: BTreeSet<(Region, Region)> = BTreeSet::new();
        let ordered = |a: Region, b: Region| if a <= b { (a, b) } else { (b, a) };
        match task.comm.pattern {
            CommPattern::PointToPoint | CommPattern::ComputeHeavy => {
                for &r in gpu_regions {
                    pairs.insert(ordered(task.data_region, r));
                }
            }
            CommPattern::Ring => {
                let n = gpu_regions.len();
                if n >= 2 {
                    for i in 0..n {
                        pairs.insert(ordered(gpu_regions[i], gpu_regions[(i + 1) % n]));
                    }
                }
            }
            CommPattern::AllReduce => {
                for (i, &a) in gpu_regions.iter().enumerate() {
                    for &b in &gpu_regions[i + 1..] {
                        pairs.insert(ordered(a, b));
                    }
                }
            }
        }
        pairs
            .into_iter()
            .map(|(a, b)| self.effective_bandwidth(a, b, t, rng))
            .fold(f64::INFINITY, f64::min)
    }

    /// Returns (P_comm, critical bandwidth in Gbps).
    pub fn comm_penalty<R: Rng>(&self, task: &TaskSpec, gpu_regions: &[Region], t: SimTime, rng: &mut R) -> (f64, f64) {
        let local = gpu_regions.iter().all(|&r| r == task.data_region);
        if local && matches!(task.comm.pattern, CommPattern::PointToPoint | CommPattern::ComputeHeavy) {
            return (1.0, self.config.intra_bandwidth_gbps);
        }
        let b_eff = self.critical_bandwidth(task, gpu_regions, t, rng);
        (penalty_from_bandwidth(task.comm.intensity, b_eff), b_eff)
    }

    /// Seconds until the next hour boundary strictly after `t`.
    pub fn next_hour_boundary(t: SimTime) -> SimTime {
        let h = (t.secs() / SECS_PER_HOUR).floor() + 1.0;
        SimTime::from_secs(h * SECS_PER_HOUR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CommProfile;
    use crate::rng::{stream, Stream};

    fn net(cfg: NetworkConfig) -> NetworkModel {
        NetworkModel::new(cfg, &mut stream(1, Stream::Network))
    }

    fn task(pattern: CommPattern, intensity: f64, data_region: Region) -> TaskSpec {
        TaskSpec {
            id: 0,
            template_name: "t".into(),
            gpus_required: 1,
            mem_per_gpu_gb: 1.0,
            base_hours: 1.0,
            arrival: SimTime::ZERO,
            deadline: SimTime::from_hours(2.0),
            critical: false,
            comm: CommProfile { pattern, intensity },
            data_region,
            data_volume_gb: 1.0,
        }
    }

    #[test]
    fn latency_table_is_symmetric_with_intra_constant() {
        let n = net(NetworkConfig::default());
        for a in Region::ALL {
            assert_eq!(n.base_latency_ms(a, a), 2.0);
            for b in Region::ALL {
                assert_eq!(n.base_latency_ms(a, b), n.base_latency_ms(b, a));
            }
        }
    }

    #[test]
    fn latency_formula_evaluates() {
        assert!((latency_from_distance(8000.0, 4.3) - 84.3).abs() < 1e-12);
    }

    #[test]
    fn latency_jitter_is_within_ten_ms() {
        let n = net(NetworkConfig::default());
        for l in n.links() {
            let d = great_circle_km(l.a.coordinates(), l.b.coordinates()) / 100.0;
            let jitter = l.base_latency_ms - d;
            assert!((0.0..=10.0).contains(&jitter), "jitter {jitter}");
        }
    }

    #[test]
    fn every_link_index_is_unique() {
        let n = net(NetworkConfig::default());
        assert_eq!(n.links().len(), 15);
        for l in n.links() {
            let got = n.link(l.a, l.b).unwrap();
            assert_eq!((got.a, got.b), (l.a, l.b));
            let rev = n.link(l.b, l.a).unwrap();
            assert_eq!((rev.a, rev.b), (l.a, l.b));
        }
    }

    #[test]
    fn effective_bandwidth_respects_phase_congestion_and_noise() {
        let mut n = net(NetworkConfig::default());
        let mut rng = stream(3, Stream::Network);
        // 20:00 falls in Evening (x0.8).
        let t = SimTime::from_hours(20.0);
        n.start_congestion(&Congestion {
            a: Region::UsEast,
            b: Region::EuWest,
            factor: 0.3,
            start: t,
            until: t + 600.0,
        });
        for _ in 0..1000 {
            let bw = n.effective_bandwidth(Region::UsEast, Region::EuWest, t, &mut rng);
            assert!((0.228..=0.252).contains(&bw), "{bw}");
        }
        let night = SimTime::from_hours(3.0);
        for _ in 0..1000 {
            let bw = n.effective_bandwidth(Region::UsWest, Region::AsiaEast, night, &mut rng);
            assert!((1.14..=1.26).contains(&bw), "{bw}");
        }
    }

    #[test]
    fn intra_region_ignores_phase_and_congestion() {
        let cfg = NetworkConfig {
            bandwidth_noise: 0.0,
            ..NetworkConfig::default()
        };
        let n = net(cfg);
        let mut rng = stream(3, Stream::Network);
        let t = SimTime::from_hours(14.0);
        assert_eq!(n.effective_bandwidth(Region::EuWest, Region::EuWest, t, &mut rng), 10.0);
    }

    #[test]
    fn congestion_window_trace() {
        let cfg = NetworkConfig {
            bandwidth_noise: 0.0,
            ..NetworkConfig::default()
        };
        let mut n = net(cfg);
        // Morning phase keeps the multiplier at 1.
        let t0 = SimTime::from_hours(6.0);
        let c = Congestion {
            a: Region::UsEast,
            b: Region::UsWest,
            factor: 0.25,
            start: t0,
            until: t0 + 1200.0,
        };
        n.start_congestion(&c);
        assert_eq!(n.expected_bandwidth(Region::UsEast, Region::UsWest, t0 + 600.0), 0.25);
        assert_eq!(n.expected_bandwidth(Region::UsEast, Region::UsWest, t0 + 1300.0), 1.0);
        n.end_congestion(Region::UsEast, Region::UsWest, t0 + 1200.0);
        assert!(n
            .link(Region::UsEast, Region::UsWest)
            .unwrap()
            .congestion_until
            .is_none());
    }

    #[test]
    fn overlapping_congestion_keeps_min_factor_latest_end() {
        let mut n = net(NetworkConfig::default());
        let t = SimTime::ZERO;
        let mk = |factor, start: f64, until: f64| Congestion {
            a: Region::AsiaEast,
            b: Region::AsiaSouth,
            factor,
            start: SimTime::from_secs(start),
            until: SimTime::from_secs(until),
        };
        n.start_congestion(&mk(0.4, 0.0, 1000.0));
        n.start_congestion(&mk(0.2, 500.0, 800.0));
        let l = n.link(Region::AsiaEast, Region::AsiaSouth).unwrap();
        assert_eq!(l.congestion_factor, 0.2);
        assert_eq!(l.congestion_until, Some(SimTime::from_secs(1000.0)));
        // The earlier end event must not clear the extended episode.
        n.end_congestion(Region::AsiaEast, Region::AsiaSouth, SimTime::from_secs(800.0));
        assert!(n.congestion_factor(Region::AsiaEast, Region::AsiaSouth, t + 900.0) < 1.0);
    }

    #[test]
    fn zero_multiplier_never_congests() {
        let cfg = NetworkConfig {
            congestion_multiplier: 0.0,
            ..NetworkConfig::default()
        };
        let mut n = net(cfg);
        let mut rng = stream(9, Stream::Network);
        for h in 0..2000 {
            assert!(n.draw_congestion(SimTime::from_hours(h as f64), &mut rng).is_empty());
        }
    }

    #[test]
    fn penalty_formula_examples() {
        assert_eq!(penalty_from_bandwidth(1.0, 1.0), 5.0);
        assert_eq!(penalty_from_bandwidth(0.0, 0.01), 1.0);
        assert_eq!(penalty_from_bandwidth(0.5, 20.0), 1.0);
        assert!((penalty_from_bandwidth(0.5, 5.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn colocated_single_gpu_has_unit_penalty() {
        let n = net(NetworkConfig::default());
        let mut rng = stream(4, Stream::Network);
        let t = task(CommPattern::ComputeHeavy, 0.5, Region::EuCentral);
        let (p, _) = n.comm_penalty(&t, &[Region::EuCentral], SimTime::ZERO, &mut rng);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn dispersed_allreduce_is_penalized() {
        let n = net(NetworkConfig::default());
        let mut rng = stream(4, Stream::Network);
        let t = task(CommPattern::AllReduce, 1.0, Region::UsEast);
        let (p, b) = n.comm_penalty(
            &t,
            &[Region::UsEast, Region::AsiaSouth],
            SimTime::from_hours(7.0),
            &mut rng,
        );
        assert!(b <= 1.05);
        assert_eq!(p, 5.0);
    }

    #[test]
    fn single_gpu_ring_has_no_links() {
        let n = net(NetworkConfig::default());
        let mut rng = stream(4, Stream::Network);
        let t = task(CommPattern::Ring, 0.9, Region::UsEast);
        let (p, b) = n.comm_penalty(&t, &[Region::AsiaEast], SimTime::ZERO, &mut rng);
        assert_eq!(p, 1.0);
        assert!(b.is_infinite());
        assert_eq!(bandwidth_penalty(b), 0.0);
    }

    #[test]
    fn default_phases_partition_the_day() {
        validate_phases(&default_phases()).unwrap();
        let mut bad = default_phases();
        bad[1].end_hour = 11.0;
        assert!(validate_phases(&bad).is_err());
    }
}
