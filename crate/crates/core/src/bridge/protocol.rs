//! Wire messages. One JSON object per line, discriminated by `type`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::accounting::{MetricsReport, RewardComponents};
use crate::model::{GpuId, TaskId, TaskStatus};

pub const PROTOCOL_VERSION: u32 = 1;
pub const TASK_DIM: usize = 14;
pub const GPU_DIM: usize = 16;
pub const GLOBAL_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub task: usize,
    pub gpu: usize,
    pub global: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        FeatureDims {
            task: TASK_DIM,
            gpu: GPU_DIM,
            global: GLOBAL_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub gpu_id: GpuId,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    Hello {
        protocol_version: u32,
        mode: Mode,
        k_max: u32,
        feature_dims: FeatureDims,
    },
    Observe {
        decision_id: u64,
        task_id: TaskId,
        k: u32,
        task_features: Vec<f64>,
        global_features: Vec<f64>,
        candidates: Vec<CandidateFeatures>,
    },
    Reward {
        decision_id: u64,
        task_id: TaskId,
        reward: f64,
        components: RewardComponents,
        terminal_status: TaskStatus,
    },
    EpisodeEnd {
        metrics: MetricsReport,
    },
    Bye,
    Nack {
        decision_id: Option<u64>,
        reason: String,
    },
    Error {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentMessage {
    Act {
        decision_id: u64,
        chosen: Vec<GpuId>,
    },
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Close,
}

/// Serializes `msg` as a single line, newline included.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol messages always serialize");
    line.push('\n');
    line
}

pub fn decode<'a, T: Deserialize<'a>>(line: &'a str) -> Result<T, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
}

pub fn write_message<W: Write + ?Sized, T: Serialize>(out: &mut W, msg: &T) -> std::io::Result<()> {
    out.write_all(encode(msg).as_bytes())?;
    out.flush()
}

/// Reads the next non-empty line. `Ok(None)` on end of stream.
pub fn read_line<R: BufRead + ?Sized>(input: &mut R) -> std::io::Result<Option<String>> {
    let mut buf = String::new();
    loop {
        buf.clear();
        if input.read_line(&mut buf)? == 0 {
            return Ok(None);
        }
        if !buf.trim().is_empty() {
            return Ok(Some(buf));
        }
    }
}
