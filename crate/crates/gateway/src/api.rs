use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use holonsim_core::federation::StrategyKind;
use holonsim_core::holons::ApprovalRequest;
use holonsim_core::kernel::Tick;
use holonsim_core::scenario::{bundled, bundled_asset, parse_script, Scenario, SchemaError};
use holonsim_core::sim::{to_ndjson, CommandError, CommandKind, LogRecord, RunMetrics, StateSnapshot};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::GatewayConfig;
use crate::runs::{Run, RunDescriptor, RunError, RunManager, RunSpec, RunStatus};

pub struct AppState {
    pub config: GatewayConfig,
    pub runs: RunManager,
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/runs", post(load_run).get(list_runs))
        .route("/runs/{id}", get(describe))
        .route("/runs/{id}/trips", post(submit_trip))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/commands", post(command))
        .route("/runs/{id}/approvals", get(approvals))
        .route("/runs/{id}/state", get(snapshot))
        .route("/runs/{id}/metrics", get(metrics))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        ApiError {
            status,
            body: json!({"error": code, "message": message.to_string()}),
        }
    }

    fn schema(e: SchemaError) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({"error": "schema_error", "path": e.path, "message": e.message}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        match e {
            RunError::UnknownRun(_) => ApiError::new(S::NOT_FOUND, "unknown_run", msg),
            RunError::BadTransition { .. } => ApiError::new(S::CONFLICT, "bad_transition", msg),
            RunError::Schema(s) => ApiError::schema(s),
            RunError::Io(_) => ApiError::new(S::INTERNAL_SERVER_ERROR, "io", msg),
            RunError::Command(c) => {
                let (status, code) = match c {
                    CommandError::UnknownApproval(_) => (S::NOT_FOUND, "unknown_approval"),
                    CommandError::ApprovalClosed(_) => (S::CONFLICT, "approval_closed"),
                    CommandError::InvalidOverridePlan(_) => (S::UNPROCESSABLE_ENTITY, "invalid_override_plan"),
                    CommandError::UnknownPassenger(_) => (S::NOT_FOUND, "unknown_passenger"),
                    CommandError::PassengerBusy(..) => (S::CONFLICT, "passenger_busy"),
                    CommandError::Disruption(_) => (S::UNPROCESSABLE_ENTITY, "invalid_disruption"),
                    CommandError::Finished => (S::CONFLICT, "run_finished"),
                };
                ApiError::new(status, code, msg)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A bundled name or an inline document.
#[derive(Deserialize)]
#[serde(untagged)]
enum NamedOr<T> {
    Name(String),
    Inline(T),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRequest {
    scenario: NamedOr<Value>,
    #[serde(default)]
    script: Option<NamedOr<Value>>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    strategy: Option<String>,
    #[serde(default)]
    ticks_per_second: Option<f64>,
    #[serde(default)]
    approval_timeout: Option<Tick>,
    #[serde(default = "yes")]
    autostart: bool,
    #[serde(default)]
    stop_when_idle: bool,
}

fn yes() -> bool {
    true
}

async fn load_run(State(app): State<Shared>, Json(req): Json<LoadRequest>) -> ApiResult<(StatusCode, Json<RunDescriptor>)> {
    let scenario = match req.scenario {
        NamedOr::Name(name) => {
            let text = bundled(&name).ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_scenario", format!("no bundled scenario `{name}`"))
            })?;
            Scenario::from_json(text)
        }
        NamedOr::Inline(doc) => Scenario::from_json(&doc.to_string()),
    }
    .map_err(ApiError::schema)?;
    let script = match req.script {
        None => Vec::new(),
        Some(NamedOr::Name(name)) => {
            let text = bundled_asset(&name).ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_script", format!("no bundled script `{name}`"))
            })?;
            parse_script(text).map_err(ApiError::schema)?
        }
        Some(NamedOr::Inline(doc)) => parse_script(&doc.to_string()).map_err(ApiError::schema)?,
    };
    let strategy = match req.strategy {
        Some(s) => s
            .parse::<StrategyKind>()
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_strategy", e))?,
        None => StrategyKind::default(),
    };
    let layer = app
        .config
        .reasoner
        .layer()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "config", e))?;
    let spec = RunSpec {
        scenario,
        script,
        seed: req.seed,
        strategy,
        approval_timeout: req.approval_timeout.or(app.config.sim.approval_timeout),
        layer,
        ticks_per_second: req.ticks_per_second.unwrap_or(app.config.sim.ticks_per_second),
        autostart: req.autostart,
        stop_when_idle: req.stop_when_idle,
    };
    let run = app.runs.load(spec)?;
    Ok((StatusCode::CREATED, Json(run.descriptor())))
}

async fn list_runs(State(app): State<Shared>) -> Json<Vec<RunDescriptor>> {
    Json(app.runs.list())
}

async fn describe(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<RunDescriptor>> {
    Ok(Json(app.runs.get(&id)?.descriptor()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripRequest {
    passenger: String,
    text: String,
}

async fn submit_trip(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<TripRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let run = app.runs.get(&id)?;
    let rid = run.submit_trip(&req.passenger, &req.text)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"request_id": rid}))))
}

#[derive(Deserialize)]
struct CommandRequest {
    #[serde(default)]
    command_id: Option<String>,
    #[serde(flatten)]
    kind: CommandKind,
}

async fn command(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<CommandRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let run = app.runs.get(&id)?;
    let command_id = tokio::task::spawn_blocking(move || run.command(req.kind, req.command_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))??;
    let run = app.runs.get(&id)?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"command_id": command_id, "status": run.status(), "tick": run.descriptor().tick})),
    ))
}

#[derive(Serialize)]
struct ApprovalView {
    pending: bool,
    #[serde(flatten)]
    request: ApprovalRequest,
}

async fn approvals(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<ApprovalView>>> {
    let run = app.runs.get(&id)?;
    let all = run.with_sim(|s| s.approvals());
    Ok(Json(
        all.into_iter()
            .map(|request| ApprovalView {
                pending: request.is_pending(),
                request,
            })
            .collect(),
    ))
}

#[derive(Serialize)]
struct StateView {
    status: RunStatus,
    #[serde(flatten)]
    snapshot: StateSnapshot,
}

async fn snapshot(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let run = app.runs.get(&id)?;
    Ok(Json(StateView {
        status: run.status(),
        snapshot: run.with_sim(|s| s.snapshot()),
    }))
}

async fn metrics(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<RunMetrics>> {
    let run = app.runs.get(&id)?;
    Ok(Json(run.with_sim(|s| s.metrics())))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

/// Server-sent frames when the client asks for `text/event-stream`,
/// otherwise one NDJSON page from the cursor.
async fn events(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let run = app.runs.get(&id)?;
    let wants_sse = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"));
    if wants_sse {
        return Ok(Sse::new(live(run, q.from)).keep_alive(KeepAlive::default()).into_response());
    }
    // Read the status first: a finished run's log is complete.
    let finished = run.status() == RunStatus::Finished;
    let records = run.records_from(q.from);
    let next = q.from + records.len() as u64;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_owned()),
            (header::HeaderName::from_static("x-next-seq"), next.to_string()),
            (header::HeaderName::from_static("x-run-finished"), finished.to_string()),
        ],
        to_ndjson(&records),
    )
        .into_response())
}

fn frame(r: &LogRecord) -> Event {
    Event::default()
        .id(r.seq.to_string())
        .event(r.kind.clone())
        .data(serde_json::to_string(r).expect("record serializes"))
}

/// Replays from `from`, then tails until the run finishes.
fn live(run: Arc<Run>, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = run.subscribe();
    let state = (run, rx, from, VecDeque::<LogRecord>::new());
    stream::unfold(state, |(run, mut rx, mut cursor, mut buf)| async move {
        loop {
            if let Some(r) = buf.pop_front() {
                return Some((Ok(frame(&r)), (run, rx, cursor, buf)));
            }
            rx.borrow_and_update();
            // Status before records: once finished, the mirror is complete.
            let finished = run.status() == RunStatus::Finished;
            let fresh = run.records_from(cursor);
            if !fresh.is_empty() {
                cursor += fresh.len() as u64;
                buf.extend(fresh);
                continue;
            }
            if finished || rx.changed().await.is_err() {
                return None;
            }
        }
    })
}
