//! Shared helpers for integration and acceptance tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::{self, JoinHandle};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use commgpu::accounting::{ClassMetrics, Counts, Histogram, MetricsReport, PerClass, RewardComponents};
use commgpu::bridge::protocol::{decode, encode, CandidateFeatures, FeatureDims, Mode};
use commgpu::bridge::{AgentMessage, ServerMessage};
use commgpu::model::TaskStatus;

const STATUSES: [TaskStatus; 7] = [
    TaskStatus::Pending,
    TaskStatus::Staging,
    TaskStatus::Running,
    TaskStatus::CompletedOnTime,
    TaskStatus::CompletedLate,
    TaskStatus::Failed,
    TaskStatus::Expired,
];

/// Finite doubles drawn from several regimes, including awkward decimals.
pub fn any_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..7) {
        0 => rng.random::<f64>(),
        1 => rng.random_range(-1e6..1e6),
        2 => f64::from_bits(rng.random::<u64>() & 0x7fef_ffff_ffff_ffff) * if rng.random() { 1.0 } else { -1.0 },
        3 => rng.random_range(-1000i64..1000) as f64,
        4 => 0.1 * rng.random_range(0..100) as f64,
        5 => f64::MIN_POSITIVE * rng.random::<f64>(),
        _ => [0.0, -0.0, 1.0, f64::MAX, f64::MIN, f64::EPSILON][rng.random_range(0..6)],
    }
}

fn any_opt(rng: &mut ChaCha8Rng) -> Option<f64> {
    rng.random_bool(0.8).then(|| any_f64(rng))
}

fn vec_f64(rng: &mut ChaCha8Rng, max: usize) -> Vec<f64> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| any_f64(rng)).collect()
}

fn any_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '-', ' ', '"', '\\', '\n', 'é', '中', '{', '}', ','];
    let n = rng.random_range(0..16);
    (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn class(rng: &mut ChaCha8Rng) -> ClassMetrics {
    ClassMetrics {
        arrived: rng.random(),
        completed: rng.random(),
        completed_on_time: rng.random(),
        completion_rate: any_opt(rng),
        deadline_satisfaction: any_opt(rng),
    }
}

pub fn any_metrics(rng: &mut ChaCha8Rng) -> MetricsReport {
    let bins = rng.random_range(0..12);
    MetricsReport {
        completion_rate: any_opt(rng),
        deadline_satisfaction: any_opt(rng),
        goodput_per_hour: any_f64(rng),
        mean_slowdown: any_opt(rng),
        p95_slowdown: any_opt(rng),
        per_class: PerClass {
            critical: class(rng),
            normal: class(rng),
        },
        bandwidth_penalty_hist: Histogram {
            edges: (0..=bins).map(|_| any_f64(rng)).collect(),
            counts: (0..bins).map(|_| rng.random()).collect(),
        },
        cost_total_usd: any_f64(rng),
        counts: Counts {
            arrived: rng.random(),
            completed_on_time: rng.random(),
            completed_late: rng.random(),
            failed: rng.random(),
            expired: rng.random(),
        },
        horizon_hours: any_f64(rng),
        mean_p_comm: any_opt(rng),
        mean_reward: any_opt(rng),
        latency_samples_ms: vec_f64(rng, 8),
    }
}

pub fn any_server_message(rng: &mut ChaCha8Rng) -> ServerMessage {
    match rng.random_range(0..7) {
        0 => ServerMessage::Hello {
            protocol_version: rng.random(),
            mode: if rng.random() { Mode::Train } else { Mode::Eval },
            k_max: rng.random(),
            feature_dims: FeatureDims {
                task: rng.random_range(0..100),
                gpu: rng.random_range(0..100),
                global: rng.random_range(0..100),
            },
        },
        1 => {
            let n = rng.random_range(0..6);
            ServerMessage::Observe {
                decision_id: rng.random(),
                task_id: rng.random(),
                k: rng.random_range(1..33),
                task_features: vec_f64(rng, 14),
                global_features: vec_f64(rng, 6),
                candidates: (0..n)
                    .map(|_| CandidateFeatures {
                        gpu_id: rng.random(),
                        features: vec_f64(rng, 16),
                    })
                    .collect(),
            }
        }
        2 => ServerMessage::Reward {
            decision_id: rng.random(),
            task_id: rng.random(),
            reward: any_f64(rng),
            components: RewardComponents {
                completion: any_f64(rng),
                deadline: any_f64(rng),
                fail: any_f64(rng),
                cost: any_f64(rng),
                comm: any_f64(rng),
                total: any_f64(rng),
            },
            terminal_status: STATUSES[rng.random_range(0..STATUSES.len())],
        },
        3 => ServerMessage::EpisodeEnd {
            metrics: any_metrics(rng),
        },
        4 => ServerMessage::Bye,
        5 => ServerMessage::Nack {
            decision_id: rng.random_bool(0.8).then(|| rng.random()),
            reason: any_string(rng),
        },
        _ => ServerMessage::Error {
            reason: any_string(rng),
        },
    }
}

pub fn any_agent_message(rng: &mut ChaCha8Rng) -> AgentMessage {
    match rng.random_range(0..3) {
        0 => {
            let n = rng.random_range(0..40);
            AgentMessage::Act {
                decision_id: rng.random(),
                chosen: (0..n).map(|_| rng.random()).collect(),
            }
        }
        1 => AgentMessage::Reset {
            seed: rng.random_bool(0.7).then(|| rng.random()),
        },
        _ => AgentMessage::Close,
    }
}

/// How the scripted agent answers `observe`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// First k candidates.
    FirstK,
    /// Last k candidates.
    LastK,
    /// An id outside the candidate set.
    NonCandidate,
    /// One id too few.
    WrongK,
    /// First candidate repeated k times (only invalid for k > 1).
    Duplicate,
    /// Never answers.
    Silent,
    /// Answers the first observe with `reset{seed}`, then plays FirstK.
    ResetOnFirstObserve(u64),
}

/// Everything the agent saw, in order.
pub type Transcript = Vec<ServerMessage>;

/// Runs a scripted agent on `stream`. After `hello` and after every
/// `episode_end` it sends the next message from `script` (then `close`).
pub fn run_agent(stream: TcpStream, policy: Policy, script: Vec<AgentMessage>) -> Transcript {
    let mut out = stream.try_clone().unwrap();
    let reader = BufReader::new(stream);
    let mut script = script.into_iter();
    let mut next = move |out: &mut TcpStream| {
        let msg = script.next().unwrap_or(AgentMessage::Close);
        let _ = out.write_all(encode(&msg).as_bytes());
    };
    let mut seen = Vec::new();
    let mut reset_sent = false;
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let msg: ServerMessage = decode(&line).expect("server sent invalid json");
        match &msg {
            ServerMessage::Hello { .. } | ServerMessage::EpisodeEnd { .. } => next(&mut out),
            ServerMessage::Observe {
                decision_id,
                k,
                candidates,
                ..
            } => {
                let k = *k as usize;
                let ids: Vec<u32> = candidates.iter().map(|c| c.gpu_id).collect();
                let chosen = match policy {
                    Policy::FirstK => Some(ids[..k].to_vec()),
                    Policy::LastK => Some(ids[ids.len() - k..].to_vec()),
                    Policy::NonCandidate => Some((0..k as u32).map(|i| u32::MAX - i).collect()),
                    Policy::WrongK => Some(ids[..k - 1].to_vec()),
                    Policy::Duplicate => Some(vec![ids[0]; k]),
                    Policy::Silent => None,
                    Policy::ResetOnFirstObserve(seed) if !reset_sent => {
                        reset_sent = true;
                        let _ = out.write_all(encode(&AgentMessage::Reset { seed: Some(seed) }).as_bytes());
                        None
                    }
                    Policy::ResetOnFirstObserve(_) => Some(ids[..k].to_vec()),
                };
                if let Some(chosen) = chosen {
                    let act = AgentMessage::Act {
                        decision_id: *decision_id,
                        chosen,
                    };
                    let _ = out.write_all(encode(&act).as_bytes());
                }
            }
            _ => {}
        }
        let end = matches!(msg, ServerMessage::Bye | ServerMessage::Error { .. });
        seen.push(msg);
        if end {
            break;
        }
    }
    seen
}

/// Binds a loopback listener and starts a scripted agent against it.
pub fn spawn_agent(policy: Policy, script: Vec<AgentMessage>) -> (TcpListener, JoinHandle<Transcript>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || run_agent(TcpStream::connect(addr).unwrap(), policy, script));
    (listener, handle)
}

/// Splits a transcript into per-episode message lists (closed by episode_end).
pub fn episodes(t: &Transcript) -> Vec<Vec<ServerMessage>> {
    let mut all = Vec::new();
    let mut cur = Vec::new();
    for m in t {
        if let ServerMessage::EpisodeEnd { .. } = m {
            all.push(std::mem::take(&mut cur));
        } else if !matches!(m, ServerMessage::Hello { .. } | ServerMessage::Bye) {
            cur.push(m.clone());
        }
    }
    all
}
