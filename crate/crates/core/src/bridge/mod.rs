//! Environment bridge for an external learning agent.

pub mod features;
pub mod protocol;
pub mod session;

pub use features::{encode_observation, Observation};
pub use protocol::{AgentMessage, Mode, ServerMessage};
pub use session::{serve, AgentSession, AgentStrategy, DEFAULT_DECISION_TIMEOUT};
