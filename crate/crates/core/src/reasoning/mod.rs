//! The reasoning layer: request parsing, plan generation, validation,
//! revision and update interpretation behind a pluggable reasoner.

mod backend;
mod parse;
pub mod planning;
mod revise;
mod rules;
mod types;

pub use backend::{
    ContextDigest, FallbackNote, MockReasoner, Prompt, Reasoner, ReasonerError, ReasonerTask,
    ReasoningLayer, RemoteReasoner, Response, WireResponse, SCHEMA_VERSION,
};
pub use parse::{interpret_update, parse_request, ClarificationReason, DEFAULT_DELAY_TICKS};
pub use planning::{generate_plan, Combination, OptionFilter, PlanOption};
pub use revise::{
    affected_legs, revise_plan, revise_plan_with, RevisionStrategy, RevisionTrigger,
    TriggerCause, TripProgress,
};
pub use rules::{validate_plan, RuleConfig, RuleId, RuleSet, Verdict, Violation};
pub use types::{
    plan_violations, AdjustmentKind, Constraint, Leg, LegMode, PadSlot, Plan, PlanStatus,
    ReasonerContext, RequestId, Reservation, ScheduleAdjustment, TaskSpec, WALK_TIME_FACTOR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Domain outcomes a reasoner can return instead of a result.
#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningFailure {
    #[error("needs clarification: {0:?}")]
    NeedsClarification(ClarificationReason),
    #[error("no feasible plan")]
    NoFeasiblePlan,
    #[error("no feasible revision")]
    NoFeasibleRevision,
    #[error("trigger does not affect any remaining leg")]
    NotAffected,
}
