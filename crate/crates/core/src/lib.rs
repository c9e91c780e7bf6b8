//! Discrete-event simulation of deadline-aware GPU scheduling across a
//! geo-distributed fleet with churn and contended wide-area links.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod bridge;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod network;
pub mod rng;
pub mod scheduling;
pub mod time;
pub mod workload;

pub use accounting::{MetricsReport, RewardWeights, TaskOutcome};
pub use config::ScenarioConfig;
pub use engine::Engine;
pub use model::{GpuId, GpuNode, Region, TaskId, TaskSpec, TaskStatus};
pub use time::SimTime;
