//! Inter-agent messages, the in-process delivery bus, and the task plan
//! document exchanged between agents.

mod bus;
pub mod canonical;
pub mod plan;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::{StateId, SymbolId};

pub use bus::{Delivery, MessageBus};
pub use canonical::{decode, encode, CodecError};
pub use plan::{
    DataRequirement, EnvironmentCheck, Entities, ExpectedTransition, InitialConditions,
    ModuleInstantiation, ParsedInstruction, PlanDiagnostic, Quantity, RecorderConfig,
    StatLoggerConfig, Subtask, TargetConditions, TaskDecomposition, TaskPlan,
};

/// The closed set of agents and modules taking part in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    Planner,
    VisionSupervisor,
    AudioSupervisor,
    ActionAgent,
    StatLogger,
    Recorder,
    Summarizer,
}

impl AgentId {
    pub const ALL: [AgentId; 7] = [
        AgentId::Planner,
        AgentId::VisionSupervisor,
        AgentId::AudioSupervisor,
        AgentId::ActionAgent,
        AgentId::StatLogger,
        AgentId::Recorder,
        AgentId::Summarizer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentId::Planner => "Planner",
            AgentId::VisionSupervisor => "VisionSupervisor",
            AgentId::AudioSupervisor => "AudioSupervisor",
            AgentId::ActionAgent => "ActionAgent",
            AgentId::StatLogger => "StatLogger",
            AgentId::Recorder => "Recorder",
            AgentId::Summarizer => "Summarizer",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subtask identifier, e.g. `t5`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubtaskId(pub String);

impl SubtaskId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubtaskId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Structured message body. The `kind` tag selects the required fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Completion {
        subtask: SubtaskId,
        symbol: SymbolId,
        success: bool,
        timestamp: f64,
    },
    Anomaly {
        code: String,
        detail: String,
        timestamp: f64,
    },
    Estimate {
        channel: String,
        value: f64,
        unit: String,
        confidence: f64,
        timestamp: f64,
    },
    Command {
        symbol: SymbolId,
        #[serde(default)]
        params: BTreeMap<String, serde_json::Value>,
    },
}

impl Payload {
    pub fn command(symbol: &str, action: &str) -> Self {
        let mut params = BTreeMap::new();
        params.insert("action".to_string(), serde_json::Value::from(action));
        Payload::Command {
            symbol: SymbolId::new(symbol),
            params,
        }
    }

    /// The `action` parameter of a command payload.
    pub fn action(&self) -> Option<&str> {
        match self {
            Payload::Command { params, .. } => params.get("action").and_then(|v| v.as_str()),
            _ => None,
        }
    }
}

/// The tuple {sender, receiver, t, q_target} plus an optional body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub subtask: SubtaskId,
    pub q_target: StateId,
    #[serde(default)]
    pub payload: Option<Payload>,
    pub sent_at: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("receiver {0} is not registered on the bus")]
    UnknownReceiver(AgentId),
    #[error("subtask `{0}` is not part of the active plan")]
    UnresolvedSubtask(SubtaskId),
    #[error("target state `{0}` is not a state of the active machine")]
    UnresolvedState(StateId),
}
