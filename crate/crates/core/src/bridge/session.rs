//! Agent sessions: transport, the agent-backed strategy and the serve loop.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand_chacha::ChaCha8Rng;

use crate::accounting::{reward_components, MetricsReport, RewardWeights, TaskOutcome};
use crate::bridge::features::encode_observation;
use crate::bridge::protocol::{
    decode, read_line, write_message, AgentMessage, CandidateFeatures, FeatureDims, Mode, ServerMessage,
    PROTOCOL_VERSION,
};
use crate::config::ScenarioConfig;
use crate::engine::Engine;
use crate::error::{BridgeError, ScheduleError};
use crate::model::{GpuId, TaskId};
use crate::scheduling::{random_select, CandidateSet, DecisionContext, Scheduler};
use crate::time::SimTime;

pub const DEFAULT_DECISION_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Message(AgentMessage),
    Malformed(String),
    Closed,
}

/// Why the current episode must stop.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Reset(Option<u64>),
    Close,
    Abort(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub decision_id: u64,
    pub task_id: TaskId,
    pub digest: u64,
    pub chosen: Vec<GpuId>,
    pub dispatched_at: SimTime,
    pub open: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub observes: u64,
    pub accepted: u64,
    pub nacks: u64,
    pub timeouts: u64,
    pub rewards: u64,
}

struct Channel {
    writer: Box<dyn Write + Send>,
    inbox: Receiver<Inbound>,
    timeout: Duration,
    next_decision: u64,
    open: BTreeMap<TaskId, DecisionRecord>,
    closed: Vec<DecisionRecord>,
    stats: SessionStats,
    control: Option<Control>,
}

impl Channel {
    fn send(&mut self, msg: &ServerMessage) {
        if let Err(e) = write_message(&mut self.writer, msg) {
            warn!("agent write failed: {e}");
            self.control.get_or_insert(Control::Abort("disconnected".into()));
        }
    }
}

/// One connected agent. Cloning shares the connection.
#[derive(Clone)]
pub struct AgentSession {
    inner: Arc<Mutex<Channel>>,
}

impl AgentSession {
    /// Spawns a reader thread that parses lines from `reader` into the inbox.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                let item = match read_line(&mut reader) {
                    Ok(Some(line)) => match decode::<AgentMessage>(&line) {
                        Ok(m) => Inbound::Message(m),
                        Err(e) => Inbound::Malformed(format!("{e}: {}", line.trim_end())),
                    },
                    Ok(None) | Err(_) => Inbound::Closed,
                };
                let done = item == Inbound::Closed;
                if tx.send(item).is_err() || done {
                    break;
                }
            }
        });
        AgentSession {
            inner: Arc::new(Mutex::new(Channel {
                writer: Box::new(writer),
                inbox: rx,
                timeout,
                next_decision: 0,
                open: BTreeMap::new(),
                closed: Vec::new(),
                stats: SessionStats::default(),
                control: None,
            })),
        }
    }

    pub fn from_tcp(stream: TcpStream, timeout: Duration) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::from_streams(reader, BufWriter::new(stream), timeout))
    }

    /// Connects to an agent listening at `addr`.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, BridgeError> {
        let addrs: Vec<_> = addr
            .to_socket_addrs()
            .map_err(|e| BridgeError::TransportUnavailable(format!("{addr}: {e}")))?
            .collect();
        let stream = addrs
            .iter()
            .find_map(|a| TcpStream::connect_timeout(a, Duration::from_secs(5)).ok())
            .ok_or_else(|| BridgeError::TransportUnavailable(format!("cannot connect to {addr}")))?;
        Ok(Self::from_tcp(stream, timeout)?)
    }

    /// Waits for one agent to connect on `listener`.
    pub fn accept(listener: &TcpListener, timeout: Duration) -> Result<Self, BridgeError> {
        let (stream, peer) = listener.accept()?;
        info!("agent connected from {peer}");
        Ok(Self::from_tcp(stream, timeout)?)
    }

    fn lock(&self) -> MutexGuard<'_, Channel> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn send(&self, msg: &ServerMessage) {
        self.lock().send(msg);
    }

    pub fn hello(&self, mode: Mode, k_max: u32) {
        self.send(&ServerMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            mode,
            k_max,
            feature_dims: FeatureDims::default(),
        });
    }

    /// Blocks until the agent sends something.
    pub fn next_inbound(&self) -> Inbound {
        self.lock().inbox.recv().unwrap_or(Inbound::Closed)
    }

    /// Clears per-episode state: decision ids restart at 0.
    pub fn begin_episode(&self) {
        let mut ch = self.lock();
        ch.next_decision = 0;
        ch.open.clear();
        ch.closed.clear();
        ch.stats = SessionStats::default();
        ch.control = None;
    }

    pub fn take_control(&self) -> Option<Control> {
        self.lock().control.take()
    }

    pub fn stats(&self) -> SessionStats {
        self.lock().stats
    }

    pub fn open_decisions(&self) -> usize {
        self.lock().open.len()
    }

    pub fn closed_decisions(&self) -> Vec<DecisionRecord> {
        self.lock().closed.clone()
    }

    /// A strategy that forwards decisions to this agent.
    pub fn strategy(&self, config: &ScenarioConfig) -> AgentStrategy {
        AgentStrategy {
            session: self.clone(),
            delta_max: config.churn.dropout_max,
            weights: config.reward,
        }
    }
}

fn validate_act(chosen: &[GpuId], k: usize, cands: &CandidateSet) -> Result<(), &'static str> {
    if chosen.len() != k {
        return Err("wrong-k");
    }
    let mut sorted = chosen.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate-id");
    }
    if !chosen.iter().all(|&g| cands.contains(g)) {
        return Err("not-in-candidate-set");
    }
    Ok(())
}

/// Scheduler that performs a blocking observe/act round-trip per decision.
/// Invalid or late answers fall back to a random placement that is not
/// tracked for reward.
pub struct AgentStrategy {
    session: AgentSession,
    delta_max: f64,
    weights: RewardWeights,
}

impl AgentStrategy {
    fn fallback(
        ch: &mut Channel,
        cands: &CandidateSet,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError> {
        if let Some(c) = &ch.control {
            return Err(ScheduleError::Aborted(format!("{c:?}")));
        }
        random_select(cands, k, rng)
    }
}

impl Scheduler for AgentStrategy {
    fn name(&self) -> &str {
        "agent"
    }

    fn select(
        &mut self,
        ctx: &DecisionContext<'_>,
        cands: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<GpuId>, ScheduleError> {
        let k = ctx.task.spec.gpus_required as usize;
        let obs = encode_observation(
            ctx.task,
            cands,
            ctx.fleet,
            ctx.network,
            ctx.now,
            ctx.pending_len,
            self.delta_max,
        );
        let mut ch = self.session.lock();
        if ch.control.is_some() {
            return Self::fallback(&mut ch, cands, k, rng);
        }
        let decision_id = ch.next_decision;
        ch.next_decision += 1;
        let digest = obs.digest();
        let candidates = obs
            .gpu_ids
            .iter()
            .zip(obs.gpu_features)
            .map(|(&gpu_id, features)| CandidateFeatures { gpu_id, features })
            .collect();
        ch.send(&ServerMessage::Observe {
            decision_id,
            task_id: ctx.task.id(),
            k: k as u32,
            task_features: obs.task_features,
            global_features: obs.global_features,
            candidates,
        });
        ch.stats.observes += 1;
        let deadline = Instant::now() + ch.timeout;
        loop {
            if ch.control.is_some() {
                return Self::fallback(&mut ch, cands, k, rng);
            }
            let wait = deadline.saturating_duration_since(Instant::now());
            let inbound = match ch.inbox.recv_timeout(wait) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    debug!("decision {decision_id} timed out");
                    ch.stats.timeouts += 1;
                    ch.send(&ServerMessage::Nack {
                        decision_id: Some(decision_id),
                        reason: "timeout".into(),
                    });
                    return Self::fallback(&mut ch, cands, k, rng);
                }
                Err(RecvTimeoutError::Disconnected) => Inbound::Closed,
            };
            match inbound {
                Inbound::Message(AgentMessage::Act {
                    decision_id: id,
                    chosen,
                }) if id == decision_id => {
                    return match validate_act(&chosen, k, cands) {
                        Ok(()) => {
                            ch.stats.accepted += 1;
                            let task_id = ctx.task.id();
                            ch.open.insert(
                                task_id,
                                DecisionRecord {
                                    decision_id,
                                    task_id,
                                    digest,
                                    chosen: chosen.clone(),
                                    dispatched_at: ctx.now,
                                    open: true,
                                },
                            );
                            Ok(chosen)
                        }
                        Err(reason) => {
                            ch.stats.nacks += 1;
                            ch.send(&ServerMessage::Nack {
                                decision_id: Some(decision_id),
                                reason: reason.into(),
                            });
                            Self::fallback(&mut ch, cands, k, rng)
                        }
                    };
                }
                Inbound::Message(AgentMessage::Act { decision_id: id, .. }) => {
                    ch.send(&ServerMessage::Nack {
                        decision_id: Some(id),
                        reason: "unknown-decision".into(),
                    });
                }
                Inbound::Message(AgentMessage::Reset { seed }) => ch.control = Some(Control::Reset(seed)),
                Inbound::Message(AgentMessage::Close) => ch.control = Some(Control::Close),
                Inbound::Malformed(reason) => {
                    ch.send(&ServerMessage::Error { reason: reason.clone() });
                    ch.control = Some(Control::Abort(reason));
                }
                Inbound::Closed => ch.control = Some(Control::Abort("disconnected".into())),
            }
        }
    }

    fn on_outcome(&mut self, outcome: &TaskOutcome) {
        let mut ch = self.session.lock();
        let Some(mut record) = ch.open.remove(&outcome.task_id) else {
            return;
        };
        match reward_components(outcome, &self.weights) {
            Ok(components) => {
                ch.send(&ServerMessage::Reward {
                    decision_id: record.decision_id,
                    task_id: outcome.task_id,
                    reward: components.total,
                    components,
                    terminal_status: outcome.status,
                });
                ch.stats.rewards += 1;
            }
            Err(e) => warn!("no reward for decision {}: {e}", record.decision_id),
        }
        record.open = false;
        ch.closed.push(record);
    }

    fn abort_requested(&self) -> bool {
        self.session.lock().control.is_some()
    }
}

/// Largest gang size any configured template asks for.
pub fn k_max(config: &ScenarioConfig) -> u32 {
    config
        .workload
        .templates
        .iter()
        .map(|t| t.gpus_required)
        .max()
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub stats: SessionStats,
    pub control: Option<Control>,
}

/// Runs one full episode against the agent. `episode_end` is sent only when
/// the episode reaches its horizon.
pub fn run_episode(session: &AgentSession, config: &ScenarioConfig, seed: u64) -> Result<EpisodeResult, BridgeError> {
    let mut engine = Engine::new(config, seed)?;
    session.begin_episode();
    engine.set_scheduler(Box::new(session.strategy(config)));
    engine.run_to_end();
    let metrics = engine.metrics();
    let control = session.take_control();
    if control.is_none() {
        session.send(&ServerMessage::EpisodeEnd {
            metrics: metrics.clone(),
        });
    }
    Ok(EpisodeResult {
        seed,
        metrics,
        stats: session.stats(),
        control,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServeSummary {
    pub episodes: Vec<EpisodeResult>,
    pub closed_by_agent: bool,
}

/// Drives a session: hello, then episodes on `reset` until `close` or
/// disconnect. A malformed line ends the session with an error.
pub fn serve(session: &AgentSession, config: &ScenarioConfig, mode: Mode) -> Result<ServeSummary, BridgeError> {
    session.hello(mode, k_max(config));
    let mut summary = ServeSummary::default();
    let mut queued: Option<Inbound> = None;
    loop {
        let inbound = queued.take().unwrap_or_else(|| session.next_inbound());
        match inbound {
            Inbound::Message(AgentMessage::Reset { seed }) => {
                let seed = seed.unwrap_or(config.seed);
                info!("episode start, seed {seed}");
                let result = run_episode(session, config, seed)?;
                let control = result.control.clone();
                summary.episodes.push(result);
                match control {
                    None => {}
                    Some(Control::Reset(seed)) => queued = Some(Inbound::Message(AgentMessage::Reset { seed })),
                    Some(Control::Close) => queued = Some(Inbound::Message(AgentMessage::Close)),
                    Some(Control::Abort(reason)) if reason == "disconnected" => return Ok(summary),
                    Some(Control::Abort(reason)) => return Err(BridgeError::Protocol(reason)),
                }
            }
            Inbound::Message(AgentMessage::Act { decision_id, .. }) => session.send(&ServerMessage::Nack {
                decision_id: Some(decision_id),
                reason: "no-open-decision".into(),
            }),
            Inbound::Message(AgentMessage::Close) => {
                session.send(&ServerMessage::Bye);
                summary.closed_by_agent = true;
                return Ok(summary);
            }
            Inbound::Malformed(reason) => {
                session.send(&ServerMessage::Error { reason: reason.clone() });
                return Err(BridgeError::Protocol(reason));
            }
            Inbound::Closed => return Ok(summary),
        }
    }
}
