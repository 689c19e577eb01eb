use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{interpret_update, parse_request};
use super::planning::generate_plan;
use super::revise::{revise_plan, RevisionTrigger};
use super::types::{plan_violations, Plan, ReasonerContext, RequestId, ScheduleAdjustment, TaskSpec};
use super::ReasoningFailure;
use crate::holon::HolonId;

/// Version of the prompt/response document schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReasonerTask {
    ParseRequest {
        text: String,
        passenger: HolonId,
        request_id: RequestId,
    },
    GeneratePlan {
        spec: TaskSpec,
    },
    RevisePlan {
        plan: Plan,
        spec: TaskSpec,
        trigger: RevisionTrigger,
    },
    InterpretUpdate {
        text: String,
        request_id: RequestId,
    },
}

impl ReasonerTask {
    pub fn name(&self) -> &'static str {
        match self {
            ReasonerTask::ParseRequest { .. } => "parse_request",
            ReasonerTask::GeneratePlan { .. } => "generate_plan",
            ReasonerTask::RevisePlan { .. } => "revise_plan",
            ReasonerTask::InterpretUpdate { .. } => "interpret_update",
        }
    }

    fn role_prompt(&self) -> &'static str {
        match self {
            ReasonerTask::ParseRequest { .. } => {
                "You convert a passenger utterance into a task_spec document."
            }
            ReasonerTask::GeneratePlan { .. } => {
                "You are the trip planner. Return a plan document whose legs chain from origin to destination."
            }
            ReasonerTask::RevisePlan { .. } => {
                "You revise an active plan after a disruption. Keep executed legs unchanged."
            }
            ReasonerTask::InterpretUpdate { .. } => {
                "You map a plain-language trip update to an adjustment document."
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContextDigest {
    pub hash: String,
    pub snapshot: ReasonerContext,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prompt {
    pub role_prompt: String,
    pub context_digest: ContextDigest,
    pub task: ReasonerTask,
    pub schema_version: u32,
}

impl Prompt {
    pub fn new(task: ReasonerTask, ctx: &ReasonerContext) -> Self {
        Prompt {
            role_prompt: task.role_prompt().to_owned(),
            context_digest: ContextDigest {
                hash: ctx.digest(),
                snapshot: ctx.clone(),
            },
            task,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn context(&self) -> &ReasonerContext {
        &self.context_digest.snapshot
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    TaskSpec(TaskSpec),
    Plan(Plan),
    Adjustment(ScheduleAdjustment),
    Failure(ReasoningFailure),
}

/// Body returned by a remote reasoner.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub response: Response,
    pub schema_version: u32,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ReasonerError {
    #[error("reasoner backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("reasoner response violates schema: {0}")]
    SchemaViolation(String),
    #[error("reasoner exceeded its time budget")]
    Timeout,
}

pub trait Reasoner: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, prompt: &Prompt) -> Result<Response, ReasonerError>;
}

/// Deterministic rule-based reasoner: a pure function of the prompt.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockReasoner;

impl Reasoner for MockReasoner {
    fn id(&self) -> &str {
        "mock"
    }

    fn call(&self, prompt: &Prompt) -> Result<Response, ReasonerError> {
        let ctx = prompt.context();
        let out = match &prompt.task {
            ReasonerTask::ParseRequest {
                text,
                passenger,
                request_id,
            } => parse_request(text, passenger, request_id.clone(), ctx).map(Response::TaskSpec),
            ReasonerTask::GeneratePlan { spec } => generate_plan(spec, ctx).map(Response::Plan),
            ReasonerTask::RevisePlan {
                plan,
                spec,
                trigger,
            } => revise_plan(plan, spec, trigger, ctx).map(Response::Plan),
            ReasonerTask::InterpretUpdate { text, request_id } => {
                interpret_update(text, request_id, ctx).map(Response::Adjustment)
            }
        };
        Ok(out.unwrap_or_else(Response::Failure))
    }
}

/// HTTP reasoner speaking the prompt/response document protocol.
pub struct RemoteReasoner {
    url: String,
    agent: ureq::Agent,
}

impl RemoteReasoner {
    pub fn new(url: impl Into<String>, budget: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(budget))
            .http_status_as_error(true)
            .build()
            .into();
        RemoteReasoner {
            url: url.into(),
            agent,
        }
    }
}

fn map_transport(err: ureq::Error) -> ReasonerError {
    match err {
        ureq::Error::Timeout(_) => ReasonerError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => ReasonerError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::WouldBlock => ReasonerError::Timeout,
        other => ReasonerError::BackendUnavailable(other.to_string()),
    }
}

impl Reasoner for RemoteReasoner {
    fn id(&self) -> &str {
        "remote"
    }

    fn call(&self, prompt: &Prompt) -> Result<Response, ReasonerError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(prompt)
            .map_err(map_transport)?;
        let body = resp.body_mut().read_to_string().map_err(map_transport)?;
        let wire: WireResponse = serde_json::from_str(&body)
            .map_err(|e| ReasonerError::SchemaViolation(e.to_string()))?;
        if wire.schema_version != SCHEMA_VERSION {
            return Err(ReasonerError::SchemaViolation(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                wire.schema_version
            )));
        }
        Ok(wire.response)
    }
}

/// Checks a response has the shape the task expects and its content
/// satisfies the structural invariants.
fn check_response(prompt: &Prompt, resp: &Response) -> Result<(), ReasonerError> {
    let ctx = prompt.context();
    let bad = |m: String| Err(ReasonerError::SchemaViolation(m));
    match (&prompt.task, resp) {
        (_, Response::Failure(_)) => Ok(()),
        (ReasonerTask::ParseRequest { request_id, .. }, Response::TaskSpec(s)) => {
            if &s.request_id != request_id {
                return bad("task_spec for another request".into());
            }
            for n in [&s.origin, &s.destination] {
                if !ctx.graph.contains_node(n) {
                    return bad(format!("task_spec names unknown node {n}"));
                }
            }
            Ok(())
        }
        (ReasonerTask::GeneratePlan { spec }, Response::Plan(p))
        | (ReasonerTask::RevisePlan { spec, .. }, Response::Plan(p)) => {
            let v = plan_violations(p, spec, &ctx.graph);
            if v.is_empty() {
                Ok(())
            } else {
                bad(v.join("; "))
            }
        }
        (ReasonerTask::InterpretUpdate { request_id, .. }, Response::Adjustment(a)) => {
            if &a.request_id != request_id {
                bad("adjustment for another request".into())
            } else {
                Ok(())
            }
        }
        (task, _) => bad(format!("unexpected response kind for {}", task.name())),
    }
}

/// A reasoner call that failed over to the mock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FallbackNote {
    pub backend: String,
    pub task: &'static str,
    pub error: String,
}

/// The reasoning layer as seen by holons: a configured backend with the
/// mock as the fallback for any failed or malformed call.
pub struct ReasoningLayer {
    backend: Box<dyn Reasoner>,
    fallback: MockReasoner,
    notes: Vec<FallbackNote>,
}

impl Default for ReasoningLayer {
    fn default() -> Self {
        Self::mock()
    }
}

impl std::fmt::Debug for ReasoningLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReasoningLayer")
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl ReasoningLayer {
    pub fn mock() -> Self {
        Self::with_backend(Box::new(MockReasoner))
    }

    pub fn with_backend(backend: Box<dyn Reasoner>) -> Self {
        ReasoningLayer {
            backend,
            fallback: MockReasoner,
            notes: Vec::new(),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Runs one reasoner call, falling back to the mock on any error.
    pub fn call(&mut self, task: ReasonerTask, ctx: &ReasonerContext) -> Response {
        let prompt = Prompt::new(task, ctx);
        let outcome = self
            .backend
            .call(&prompt)
            .and_then(|r| check_response(&prompt, &r).map(|_| r));
        match outcome {
            Ok(r) => r,
            Err(e) => {
                self.notes.push(FallbackNote {
                    backend: self.backend.id().to_owned(),
                    task: prompt.task.name(),
                    error: e.to_string(),
                });
                self.fallback
                    .call(&prompt)
                    .expect("mock reasoner is infallible")
            }
        }
    }

    /// Fallbacks since the last call to this method.
    pub fn take_fallbacks(&mut self) -> Vec<FallbackNote> {
        std::mem::take(&mut self.notes)
    }

    pub fn parse_request(
        &mut self,
        text: &str,
        passenger: &HolonId,
        request_id: RequestId,
        ctx: &ReasonerContext,
    ) -> Result<TaskSpec, ReasoningFailure> {
        let task = ReasonerTask::ParseRequest {
            text: text.to_owned(),
            passenger: passenger.clone(),
            request_id,
        };
        match self.call(task, ctx) {
            Response::TaskSpec(s) => Ok(s),
            Response::Failure(f) => Err(f),
            _ => unreachable!("response shape checked"),
        }
    }

    pub fn generate_plan(
        &mut self,
        spec: &TaskSpec,
        ctx: &ReasonerContext,
    ) -> Result<Plan, ReasoningFailure> {
        match self.call(ReasonerTask::GeneratePlan { spec: spec.clone() }, ctx) {
            Response::Plan(p) => Ok(p),
            Response::Failure(f) => Err(f),
            _ => unreachable!("response shape checked"),
        }
    }

    pub fn revise_plan(
        &mut self,
        plan: &Plan,
        spec: &TaskSpec,
        trigger: &RevisionTrigger,
        ctx: &ReasonerContext,
    ) -> Result<Plan, ReasoningFailure> {
        let task = ReasonerTask::RevisePlan {
            plan: plan.clone(),
            spec: spec.clone(),
            trigger: trigger.clone(),
        };
        match self.call(task, ctx) {
            Response::Plan(p) => Ok(p),
            Response::Failure(f) => Err(f),
            _ => unreachable!("response shape checked"),
        }
    }

    pub fn interpret_update(
        &mut self,
        text: &str,
        request_id: &RequestId,
        ctx: &ReasonerContext,
    ) -> Result<ScheduleAdjustment, ReasoningFailure> {
        let task = ReasonerTask::InterpretUpdate {
            text: text.to_owned(),
            request_id: request_id.clone(),
        };
        match self.call(task, ctx) {
            Response::Adjustment(a) => Ok(a),
            Response::Failure(f) => Err(f),
            _ => unreachable!("response shape checked"),
        }
    }
}
