use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Disruption, KernelError, Tick};
use crate::reasoning::Plan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandKind {
    Approve {
        approval_id: String,
    },
    Override {
        approval_id: String,
        plan: Plan,
    },
    Reject {
        approval_id: String,
    },
    InjectDisruption {
        disruption: Disruption,
    },
    PassengerMessage {
        passenger: String,
        text: String,
    },
    Pause,
    Resume,
    Step,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Approve { .. } => "approve",
            CommandKind::Override { .. } => "override",
            CommandKind::Reject { .. } => "reject",
            CommandKind::InjectDisruption { .. } => "inject_disruption",
            CommandKind::PassengerMessage { .. } => "passenger_message",
            CommandKind::Pause => "pause",
            CommandKind::Resume => "resume",
            CommandKind::Step => "step",
        }
    }

    pub fn approval_id(&self) -> Option<&str> {
        match self {
            CommandKind::Approve { approval_id }
            | CommandKind::Reject { approval_id }
            | CommandKind::Override { approval_id, .. } => Some(approval_id),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorCommand {
    pub command_id: String,
    #[serde(flatten)]
    pub kind: CommandKind,
    /// Wall-clock receipt time in milliseconds since the epoch. Never logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at_ms: Option<u64>,
}

/// An operator action pinned to a simulation tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub at_tick: Tick,
    #[serde(flatten)]
    pub command: CommandKind,
}

/// Sorts by tick, keeping file order among equal ticks.
pub fn sort_script(actions: &mut [ScriptedAction]) {
    actions.sort_by_key(|a| a.at_tick);
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CommandError {
    #[error("unknown approval `{0}`")]
    UnknownApproval(String),
    #[error("approval `{0}` is already resolved")]
    ApprovalClosed(String),
    #[error("override plan is invalid: {}", .0.join("; "))]
    InvalidOverridePlan(Vec<String>),
    #[error("unknown passenger `{0}`")]
    UnknownPassenger(String),
    #[error("passenger `{0}` already has trip {1} in progress")]
    PassengerBusy(String, String),
    #[error(transparent)]
    Disruption(#[from] KernelError),
    #[error("run is finished")]
    Finished,
}
