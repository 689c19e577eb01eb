//! Role-specialized holons: resource matching, planner decomposition and
//! the safety-gate records.

mod matching;
mod planner;

pub use matching::{
    candidates_for, choose, match_resources, reach_time, AllocationDecision, Candidate, MatchError,
};
pub use planner::{
    ground_fallback, materialize, planner_decompose, planner_revise, task_id, Proposal,
    Substitution, WALK_LIMIT,
};

use serde::{Deserialize, Serialize};

use crate::kernel::Tick;
use crate::reasoning::{Plan, RequestId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskClass {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum Decision {
    Approved,
    Overridden { plan_id: String, revision: u32 },
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub approval_id: String,
    pub request_id: RequestId,
    pub plan_id: String,
    pub revision: u32,
    pub risk_class: RiskClass,
    pub submitted_at: Tick,
    pub timeout_at: Tick,
    pub plan: Plan,
    pub fallback_plan: Option<Plan>,
    pub decision: Option<Decision>,
    pub decided_by: Option<String>,
    /// Set once the timeout fired without a decision.
    #[serde(default)]
    pub timed_out: bool,
}

impl ApprovalRequest {
    pub fn is_pending(&self) -> bool {
        self.decision.is_none() && !self.timed_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOutcome {
    Cleared,
    FallbackActivated,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusKind {
    LegStarted,
    LegProgress,
    LegBlocked,
    LegCompleted,
    ResourceFault,
}

impl StatusKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, StatusKind::LegBlocked | StatusKind::LegCompleted)
    }
}
