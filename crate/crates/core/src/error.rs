use thiserror::Error;

use crate::model::{GpuId, TaskId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task} is not pending")]
    NotPending { task: TaskId },
    #[error("task {task} needs {required} GPUs, got {given}")]
    WrongCount { task: TaskId, required: u32, given: usize },
    #[error("GPU {gpu} rejected: {reason}")]
    GpuRejected { gpu: GpuId, reason: &'static str },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("insufficient candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("decision abandoned: {0}")]
    Aborted(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("expired task {0} carries no reward")]
    Expired(TaskId),
    #[error("task {0} is not terminal")]
    NotTerminal(TaskId),
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("agent transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error("agent disconnected")]
    Disconnected,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("agent closed the session")]
    Closed,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
