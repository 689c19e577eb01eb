//! The simulation runtime: holarchy, trip workflow, safety gate, leg
//! execution and the merged run log.

mod command;
mod log;
mod supervisor;
mod task;

pub use command::{sort_script, CommandError, CommandKind, OperatorCommand, ScriptedAction};
pub use log::{parse_ndjson, sha256_hex, to_ndjson, EventLog, LogRecord};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::federation::{
    ConversationOutcome, CoordinationMetrics, CoordinationStrategy, MetricsBuilder, StrategyKind,
};
use crate::holon::{
    CapabilityDescriptor, HolonId, HolonSpec, Message, MessageCounters, MessageId, MessageKind,
    Registry, Role,
};
use crate::holons::ApprovalRequest;
use crate::kernel::{
    CityGraph, EdgeId, EventQueue, KernelEvent, NodeId, ResourceId, ResourceKind, Tick,
    WorldState,
};
use crate::reasoning::{
    plan_violations, validate_plan, PadSlot, Plan, ReasonerContext, ReasoningLayer, RequestId,
    Reservation, RevisionTrigger, RuleSet, TaskSpec,
};
use crate::scenario::{Scenario, SchemaError};

pub const ROOT: &str = "S-SoS";
pub const PLANNER: &str = "Planner";
pub const GROUND_SUPERVISOR: &str = "S-CS1";
pub const AIR_SUPERVISOR: &str = "S-CS2";
pub const OPERATOR: &str = "operator";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimEvent {
    Utterance {
        passenger: String,
        text: String,
        id: RequestId,
    },
    Kernel(KernelEvent),
    LegStart {
        task: String,
        token: u64,
    },
    Move {
        task: String,
        edge: EdgeId,
        to: NodeId,
        ticks: Tick,
    },
    ApprovalTimeout {
        approval_id: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TripState {
    Planning,
    Gating,
    Active,
    Replanning,
    Completed,
    Aborted,
}

impl TripState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TripState::Completed | TripState::Aborted)
    }
}

/// A plan waiting on the safety gate.
#[derive(Clone, Debug)]
struct PendingGate {
    plan: Plan,
    from: usize,
    approval: Option<String>,
    fallback: Option<Plan>,
    request_msg: Option<MessageId>,
}

#[derive(Clone, Debug)]
struct Trip {
    request_id: RequestId,
    passenger: String,
    holon: HolonId,
    spec: TaskSpec,
    state: TripState,
    plan: Option<Plan>,
    requested_at: Tick,
    /// Legs carried out so far.
    done: usize,
    current: Option<usize>,
    hold_until: Tick,
    cancel_requested: bool,
    priority: bool,
    departed_at: Option<Tick>,
    finished_at: Option<Tick>,
    gate: Option<PendingGate>,
    deferred_block: Option<RevisionTrigger>,
    start_token: u64,
}

#[derive(Clone, Debug)]
struct Passenger {
    holon: HolonId,
    location: NodeId,
    active: Option<RequestId>,
}

#[derive(Clone, Debug)]
struct Running {
    leg: crate::reasoning::Leg,
    leg_index: usize,
    plan_id: String,
    revision: u32,
    edge_idx: usize,
    nodes: Vec<NodeId>,
    edges: Vec<EdgeId>,
    ticks: Tick,
    fault: bool,
}

#[derive(Clone, Debug)]
struct TaskRun {
    holon: HolonId,
    sub: HolonId,
    request_id: RequestId,
    leg_id: String,
    token: u64,
    run: Option<Running>,
}

/// Knobs that are not part of the scenario document.
#[derive(Debug, Default)]
pub struct SimOptions {
    pub seed: Option<u64>,
    pub strategy: StrategyKind,
    pub layer: Option<ReasoningLayer>,
    pub script: Vec<ScriptedAction>,
    pub approval_timeout: Option<Tick>,
    /// Keep ticking when idle; only the time limit ends the run.
    pub keep_alive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub tick: Tick,
    pub trips: usize,
    pub completed: usize,
    pub aborted: usize,
    pub approvals: usize,
    pub fallbacks: usize,
    pub revisions: usize,
    pub mean_door_to_door: Option<f64>,
    pub messages: MessageCounters,
    pub coordination: CoordinationMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripView {
    pub request_id: RequestId,
    pub passenger: String,
    pub state: TripState,
    pub plan_id: Option<String>,
    pub revision: Option<u32>,
    pub current_leg: Option<String>,
    pub legs_done: usize,
    pub hold_until: Tick,
    pub priority: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateSnapshot {
    pub tick: Tick,
    pub finished: bool,
    pub world_digest: String,
    pub world: WorldState,
    pub trips: Vec<TripView>,
    pub pending_approvals: Vec<String>,
    pub log_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Quiescent,
    TimeLimit,
}

/// One simulation run. Single-threaded; all inputs enter through the
/// command queue and take effect at tick boundaries.
#[derive(Debug)]
pub struct Simulation {
    name: String,
    world: WorldState,
    graph: Arc<CityGraph>,
    rules: RuleSet,
    registry: Registry,
    queue: EventQueue<SimEvent>,
    log: EventLog,
    layer: ReasoningLayer,
    strategy: CoordinationStrategy,
    coordination: MetricsBuilder,
    conversations: Vec<ConversationOutcome>,
    commands: VecDeque<OperatorCommand>,
    script: Vec<ScriptedAction>,
    script_pos: usize,
    next_tick: Tick,
    max_ticks: Tick,
    approval_timeout: Tick,
    keep_alive: bool,
    finished: Option<FinishReason>,
    trips: BTreeMap<RequestId, Trip>,
    passengers: BTreeMap<String, Passenger>,
    approvals: BTreeMap<String, ApprovalRequest>,
    tasks: BTreeMap<String, TaskRun>,
    owners: BTreeMap<ResourceId, RequestId>,
    resource_holons: BTreeMap<ResourceId, HolonId>,
    trip_ids: BTreeMap<String, RequestId>,
    next_request: u64,
    next_approval: u64,
    next_command: u64,
    fallbacks: usize,
    revisions: usize,
    violations: Vec<String>,
    root: HolonId,
    planner: HolonId,
    ground: HolonId,
    air: HolonId,
    operator: HolonId,
}

fn capability(name: &str) -> CapabilityDescriptor {
    CapabilityDescriptor::new(name)
}

impl Simulation {
    pub fn new(scenario: &Scenario, opts: SimOptions) -> Result<Self, SchemaError> {
        scenario.validate()?;
        let mut world = scenario.world()?;
        if let Some(seed) = opts.seed {
            world.rng_seed = seed;
        }
        let graph = Arc::new(world.graph.clone());
        let mut registry = Registry::new();
        let reg = |r: &mut Registry, spec: HolonSpec, parent: Option<&HolonId>| {
            r.register(spec, parent)
                .map_err(|e| SchemaError::new(".", e))
        };
        let root = reg(
            &mut registry,
            HolonSpec::new(ROOT, Role::Supervisor)
                .capability(capability("supervise.trips"))
                .capability(capability("gate.safety"))
                .capability(capability("dispatch.legs"))
                .reasoner("mock"),
            None,
        )?;
        let planner = reg(
            &mut registry,
            HolonSpec::new(PLANNER, Role::Planner)
                .capability(capability("plan.decompose"))
                .capability(capability("plan.revise"))
                .reasoner("mock"),
            Some(&root),
        )?;
        let ground = reg(
            &mut registry,
            HolonSpec::new(GROUND_SUPERVISOR, Role::Supervisor)
                .capability(capability("supervise.ground"))
                .capability(capability("dispatch.ground")),
            Some(&root),
        )?;
        let air = reg(
            &mut registry,
            HolonSpec::new(AIR_SUPERVISOR, Role::Supervisor)
                .capability(capability("supervise.air"))
                .capability(capability("dispatch.air")),
            Some(&root),
        )?;
        let mut resource_holons = BTreeMap::new();
        for r in world.resources.values() {
            let (parent, cap) = match r.kind {
                ResourceKind::Scooter => (&ground, "ride.scooter"),
                ResourceKind::GroundTaxi => (&ground, "ride.ground_taxi"),
                ResourceKind::AirTaxi => (&air, "fly.air_taxi"),
            };
            let id = reg(
                &mut registry,
                HolonSpec::new(r.id.as_str(), Role::ResourceMachine).capability(capability(cap)),
                Some(parent),
            )?;
            resource_holons.insert(r.id.clone(), id);
        }
        for v in graph.vertiports() {
            let mut spec = HolonSpec::new(v.id.as_str(), Role::ResourceMachine)
                .capability(capability("land.vertiport"));
            if v.charging {
                spec = spec.capability(capability("charge.vertiport"));
            }
            if registry.contains(&air.child(v.id.as_str())) {
                return Err(SchemaError::new(
                    "graph.nodes",
                    format!("vertiport `{}` clashes with a resource id", v.id),
                ));
            }
            reg(&mut registry, spec, Some(&air))?;
        }
        let mut passengers = BTreeMap::new();
        for p in &scenario.passengers {
            let holon = reg(
                &mut registry,
                HolonSpec::new(&p.id, Role::ResourceHuman)
                    .capability(capability("passenger.request"))
                    .capability(capability("passenger.update")),
                Some(&root),
            )
            .map_err(|e| SchemaError::new("passengers", e.message))?;
            passengers.insert(
                p.id.clone(),
                Passenger {
                    holon,
                    location: p.location.clone(),
                    active: None,
                },
            );
        }
        if passengers.contains_key(OPERATOR) {
            return Err(SchemaError::new("passengers", "`operator` is reserved"));
        }
        let operator = reg(
            &mut registry,
            HolonSpec::new(OPERATOR, Role::ResourceHuman).capability(capability("operator.approve")),
            Some(&root),
        )?;
        let strategy = CoordinationStrategy::install(opts.strategy, &mut registry)
            .map_err(|e| SchemaError::new(".", e))?;

        let mut script = opts.script;
        sort_script(&mut script);
        let mut sim = Simulation {
            name: scenario.name.clone(),
            graph,
            rules: scenario.rules.clone().unwrap_or_default(),
            registry,
            queue: EventQueue::new(),
            log: EventLog::new(),
            layer: opts.layer.unwrap_or_default(),
            coordination: MetricsBuilder::new(strategy.kind),
            conversations: Vec::new(),
            strategy,
            commands: VecDeque::new(),
            script,
            script_pos: 0,
            next_tick: 0,
            max_ticks: scenario.limits.max_ticks,
            keep_alive: opts.keep_alive,
            approval_timeout: opts
                .approval_timeout
                .unwrap_or(scenario.limits.approval_timeout)
                .max(1),
            finished: None,
            trips: BTreeMap::new(),
            passengers,
            approvals: BTreeMap::new(),
            tasks: BTreeMap::new(),
            owners: BTreeMap::new(),
            resource_holons,
            trip_ids: BTreeMap::new(),
            next_request: 0,
            next_approval: 0,
            next_command: 0,
            fallbacks: 0,
            revisions: 0,
            violations: Vec::new(),
            root,
            planner,
            ground,
            air,
            operator,
            world,
        };
        sim.log.push(
            0,
            "run_started",
            json!({
                "scenario": sim.name,
                "seed": sim.world.rng_seed,
                "strategy": sim.strategy.kind,
                "reasoner": sim.layer.backend_id(),
                "approval_timeout": sim.approval_timeout,
                "max_ticks": sim.max_ticks,
            }),
        );
        let holons: Vec<_> = sim
            .registry
            .holons()
            .map(|h| (h.id.clone(), h.role, h.capabilities.iter().map(|c| c.name.clone()).collect::<Vec<_>>()))
            .collect();
        for (id, role, caps) in holons {
            sim.log.push(
                0,
                "holon_registered",
                json!({"id": id, "role": role, "capabilities": caps}),
            );
        }
        let disruptions: Vec<_> = sim.world.disruptions.values().cloned().collect();
        for d in disruptions {
            sim.schedule_disruption(&d);
        }
        let mut requests: Vec<(Tick, usize, usize, String, String)> = Vec::new();
        for (pi, p) in scenario.passengers.iter().enumerate() {
            for (ri, r) in p.requests.iter().enumerate() {
                requests.push((r.at, pi, ri, p.id.clone(), r.text.clone()));
            }
        }
        requests.sort();
        for (at, _, _, passenger, text) in requests {
            let id = sim.fresh_request_id();
            sim.queue.push(at, SimEvent::Utterance { passenger, text, id });
        }
        Ok(sim)
    }

    fn fresh_request_id(&mut self) -> RequestId {
        self.next_request += 1;
        RequestId(format!("R{}", self.next_request))
    }

    fn schedule_disruption(&mut self, d: &crate::kernel::Disruption) {
        let at = d.activation.max(self.next_tick);
        self.queue.push(
            at,
            SimEvent::Kernel(KernelEvent::DisruptionActivated { id: d.id.clone() }),
        );
        if let Some(e) = d.expiry {
            self.queue.push(
                e.max(at + 1),
                SimEvent::Kernel(KernelEvent::DisruptionExpired { id: d.id.clone() }),
            );
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tick(&self) -> Tick {
        self.world.clock
    }

    /// The next tick [`step`](Self::step) will process.
    pub fn next_tick(&self) -> Tick {
        self.next_tick
    }

    pub fn max_ticks(&self) -> Tick {
        self.max_ticks
    }

    pub fn seed(&self) -> u64 {
        self.world.rng_seed
    }

    /// The installed coordination pattern and its middle agents.
    pub fn coordination_strategy(&self) -> &CoordinationStrategy {
        &self.strategy
    }

    /// Every discovery conversation routed so far, in order.
    pub fn conversations(&self) -> &[ConversationOutcome] {
        &self.conversations
    }

    pub fn strategy(&self) -> StrategyKind {
        self.strategy.kind
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn finish_reason(&self) -> Option<FinishReason> {
        self.finished
    }

    /// World and holarchy invariant violations seen so far.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn approvals(&self) -> Vec<ApprovalRequest> {
        self.approvals.values().cloned().collect()
    }

    pub fn pending_approvals(&self) -> Vec<ApprovalRequest> {
        let mut v: Vec<_> = self
            .approvals
            .values()
            .filter(|a| a.is_pending())
            .cloned()
            .collect();
        v.sort_by(|a, b| (a.timeout_at, &a.approval_id).cmp(&(b.timeout_at, &b.approval_id)));
        v
    }

    /// Queues an operator command for the next tick boundary.
    pub fn submit(&mut self, kind: CommandKind) -> Result<String, CommandError> {
        self.next_command += 1;
        let id = format!("cmd-{}", self.next_command);
        self.submit_command(OperatorCommand {
            command_id: id.clone(),
            kind,
            received_at_ms: None,
        })?;
        Ok(id)
    }

    pub fn submit_command(&mut self, cmd: OperatorCommand) -> Result<(), CommandError> {
        self.check_command(&cmd.kind)?;
        self.commands.push_back(cmd);
        Ok(())
    }

    /// Queues a passenger utterance; returns the request id it will carry.
    pub fn submit_trip(&mut self, passenger: &str, text: &str) -> Result<RequestId, CommandError> {
        let kind = CommandKind::PassengerMessage {
            passenger: passenger.to_owned(),
            text: text.to_owned(),
        };
        self.check_command(&kind)?;
        if let Some(active) = self.passengers.get(passenger).and_then(|p| p.active.as_ref()) {
            return Err(CommandError::PassengerBusy(passenger.to_owned(), active.0.clone()));
        }
        let rid = self.fresh_request_id();
        self.next_command += 1;
        let command_id = format!("cmd-{}", self.next_command);
        self.trip_ids.insert(command_id.clone(), rid.clone());
        self.commands.push_back(OperatorCommand {
            command_id,
            kind,
            received_at_ms: None,
        });
        Ok(rid)
    }

    fn check_command(&self, kind: &CommandKind) -> Result<(), CommandError> {
        if self.finished.is_some() {
            return Err(CommandError::Finished);
        }
        match kind {
            CommandKind::Approve { approval_id }
            | CommandKind::Reject { approval_id }
            | CommandKind::Override { approval_id, .. } => {
                let a = self
                    .approvals
                    .get(approval_id)
                    .ok_or_else(|| CommandError::UnknownApproval(approval_id.clone()))?;
                if !a.is_pending() {
                    return Err(CommandError::ApprovalClosed(approval_id.clone()));
                }
                if let CommandKind::Override { plan, .. } = kind {
                    let trip = &self.trips[&a.request_id];
                    let mut problems = plan_violations(plan, &trip.spec, &self.graph);
                    if plan.plan_id != a.plan_id {
                        problems.push(format!("plan id {} is not {}", plan.plan_id, a.plan_id));
                    }
                    let ctx = self.ctx_for(Some(&a.request_id));
                    problems.extend(
                        validate_plan(plan, &self.rules, &ctx)
                            .violations
                            .into_iter()
                            .map(|v| format!("{:?} on {}: {}", v.rule, v.leg, v.detail)),
                    );
                    if !problems.is_empty() {
                        return Err(CommandError::InvalidOverridePlan(problems));
                    }
                }
                Ok(())
            }
            CommandKind::InjectDisruption { disruption } => {
                self.world.check_disruption(disruption)?;
                let queued = self.commands.iter().any(|c| {
                    matches!(&c.kind, CommandKind::InjectDisruption { disruption: d } if d.id == disruption.id)
                });
                if queued {
                    return Err(crate::kernel::KernelError::DuplicateDisruption(
                        disruption.id.clone(),
                    )
                    .into());
                }
                Ok(())
            }
            CommandKind::PassengerMessage { passenger, .. } => {
                if self.passengers.contains_key(passenger) {
                    Ok(())
                } else {
                    Err(CommandError::UnknownPassenger(passenger.clone()))
                }
            }
            CommandKind::Pause | CommandKind::Resume | CommandKind::Step => Ok(()),
        }
    }

    /// Processes one tick. Returns false once the run is finished.
    pub fn step(&mut self) -> bool {
        if self.finished.is_some() {
            return false;
        }
        let t = self.next_tick;
        self.world.clock = t;
        while self
            .script
            .get(self.script_pos)
            .is_some_and(|a| a.at_tick <= t)
        {
            let action = self.script[self.script_pos].clone();
            self.script_pos += 1;
            let cmd = OperatorCommand {
                command_id: format!("script-{}", self.script_pos),
                kind: action.command,
                received_at_ms: None,
            };
            self.apply_command(cmd);
        }
        while let Some(cmd) = self.commands.pop_front() {
            self.apply_command(cmd);
        }
        if t > 0 {
            for (id, status) in self.world.charge_tick() {
                self.log
                    .push(t, "resource_status", json!({"resource": id, "status": status}));
            }
        }
        loop {
            if let Some(msg) = self.registry.next_message() {
                self.dispatch(msg);
            } else if let Some(ev) = self.queue.pop_due(t) {
                self.handle_event(ev.event);
            } else {
                break;
            }
            self.flush_fallbacks();
        }
        for v in self
            .world
            .invariant_violations()
            .into_iter()
            .chain(self.registry.tree_violations())
        {
            self.log.push(t, "invariant_violation", json!({"detail": v}));
            self.violations.push(format!("tick {t}: {v}"));
        }
        self.next_tick = t + 1;
        if !self.keep_alive && self.is_quiescent() {
            self.finish(FinishReason::Quiescent);
        } else if self.next_tick > self.max_ticks {
            self.finish(FinishReason::TimeLimit);
        }
        self.finished.is_none()
    }

    /// Steps until quiescence or the scenario time limit.
    pub fn run(&mut self) -> FinishReason {
        while self.step() {}
        self.finished.expect("loop ends when finished")
    }

    /// Steps until the log holds `tick >= until` or the run ends.
    pub fn run_until(&mut self, until: Tick) {
        while self.next_tick <= until && self.step() {}
    }

    fn finish(&mut self, reason: FinishReason) {
        let t = self.world.clock;
        self.log.push(
            t,
            "run_finished",
            json!({"reason": reason, "trips": self.trips.len()}),
        );
        self.finished = Some(reason);
    }

    fn is_quiescent(&self) -> bool {
        self.commands.is_empty()
            && self.script_pos >= self.script.len()
            && !self.registry.has_pending_messages()
            && self.trips.values().all(|t| t.state.is_terminal())
            && self.queue.pending().iter().all(|s| {
                matches!(
                    s.event,
                    SimEvent::Kernel(_) | SimEvent::ApprovalTimeout { .. }
                )
            })
    }

    fn flush_fallbacks(&mut self) {
        for note in self.layer.take_fallbacks() {
            self.log.push(
                self.world.clock,
                "reasoner_fallback",
                serde_json::to_value(&note).expect("note serializes"),
            );
        }
    }

    /// Sends a message and records it in the run log.
    fn send(
        &mut self,
        from: &HolonId,
        to: &HolonId,
        kind: MessageKind,
        payload: Value,
        correlation: Option<MessageId>,
    ) -> Option<MessageId> {
        let t = self.world.clock;
        let mut msg = Message::new(from.clone(), to.clone(), kind, payload).at(t);
        if let Some(c) = correlation {
            msg = msg.replying_to(c);
        }
        match self.registry.send(msg) {
            Ok((receipt, m)) => {
                self.log.push(
                    t,
                    "message",
                    json!({
                        "id": m.id,
                        "kind": m.kind,
                        "sender": m.sender,
                        "recipient": m.recipient,
                        "correlation": m.correlation,
                        "delivery": receipt.seq,
                        "body": m.payload,
                    }),
                );
                Some(receipt.id)
            }
            Err(e) => {
                self.log.push(
                    t,
                    "message_rejected",
                    json!({"sender": from, "recipient": to, "kind": kind, "error": e.to_string()}),
                );
                None
            }
        }
    }

    fn dispatch(&mut self, msg: Message) {
        let to = msg.recipient.clone();
        if to == self.root {
            self.on_supervisor(msg);
        } else if to == self.planner {
            self.on_planner(msg);
        } else if to == self.ground || to == self.air {
            self.on_sub_supervisor(msg);
        }
        // Passengers, the operator, resources and tasks only receive
        // informational traffic.
    }

    fn handle_event(&mut self, ev: SimEvent) {
        match ev {
            SimEvent::Utterance {
                passenger,
                text,
                id,
            } => self.on_utterance(&passenger, &text, id),
            SimEvent::Kernel(k) => self.on_kernel(k),
            SimEvent::LegStart { task, token } => self.on_leg_start(&task, token),
            SimEvent::Move {
                task,
                edge,
                to,
                ticks,
            } => self.on_move(&task, &edge, &to, ticks),
            SimEvent::ApprovalTimeout { approval_id } => self.on_approval_timeout(&approval_id),
        }
    }

    fn apply_command(&mut self, cmd: OperatorCommand) {
        let t = self.world.clock;
        let mut rec = serde_json::to_value(&cmd).expect("command serializes");
        if let Some(o) = rec.as_object_mut() {
            o.remove("received_at_ms");
        }
        let kind = cmd.kind.name();
        let command_id = cmd.command_id.clone();
        if let Err(e) = self.check_command(&cmd.kind) {
            self.log.push(
                t,
                "command_rejected",
                json!({"command_id": command_id, "command": kind, "error": e.to_string()}),
            );
            return;
        }
        self.log.push(t, "command_received", rec);
        match cmd.kind {
            CommandKind::Approve { approval_id } => {
                self.operator_decision(&approval_id, MessageKind::Accept, json!("approve"), None)
            }
            CommandKind::Reject { approval_id } => {
                self.operator_decision(&approval_id, MessageKind::Reject, json!("reject"), None)
            }
            CommandKind::Override { approval_id, plan } => self.operator_decision(
                &approval_id,
                MessageKind::Accept,
                json!("override"),
                Some(plan),
            ),
            CommandKind::InjectDisruption { disruption } => {
                match self.world.inject_disruption(disruption.clone()) {
                    Ok(()) => {
                        self.log.push(
                            t,
                            "disruption_injected",
                            serde_json::to_value(&disruption).expect("disruption serializes"),
                        );
                        self.schedule_disruption(&disruption);
                    }
                    Err(e) => {
                        self.log.push(
                            t,
                            "command_rejected",
                            json!({"command_id": command_id, "command": kind, "error": e.to_string()}),
                        );
                    }
                }
            }
            CommandKind::PassengerMessage { passenger, text } => {
                let id = match self.trip_ids.remove(&command_id) {
                    Some(id) => id,
                    None => self.fresh_request_id(),
                };
                self.queue.push(t, SimEvent::Utterance { passenger, text, id });
            }
            CommandKind::Pause | CommandKind::Resume | CommandKind::Step => {}
        }
    }

    fn operator_decision(
        &mut self,
        approval_id: &str,
        kind: MessageKind,
        decision: Value,
        plan: Option<Plan>,
    ) {
        let corr = self.approvals.get(approval_id).and_then(|a| {
            self.trips
                .get(&a.request_id)
                .and_then(|t| t.gate.as_ref())
                .and_then(|g| g.request_msg)
        });
        let mut payload = json!({
            "topic": "approval",
            "approval_id": approval_id,
            "decision": decision,
        });
        if let Some(p) = plan {
            payload["plan"] = serde_json::to_value(p).expect("plan serializes");
        }
        let (op, root) = (self.operator.clone(), self.root.clone());
        self.send(&op, &root, kind, payload, corr);
    }

    /// Reasoner context as seen on behalf of `trip`.
    fn ctx_for(&self, trip: Option<&RequestId>) -> ReasonerContext {
        let mut ctx = ReasonerContext::new(self.graph.clone(), self.world.clock);
        ctx.disruptions = self.world.disruptions.values().cloned().collect();
        ctx.resources = self.world.resources.values().cloned().collect();
        ctx.rules = self.rules.clone();
        ctx.battery = self.world.battery;
        if let Some(rid) = trip {
            if let Some(t) = self.trips.get(rid) {
                ctx.passenger_location = self.passengers.get(&t.passenger).map(|p| p.location.clone());
            }
        }
        for (id, other) in &self.trips {
            if Some(id) == trip || other.state.is_terminal() {
                continue;
            }
            let Some(plan) = &other.plan else { continue };
            for leg in plan.legs.iter().skip(other.done) {
                if let Some(r) = &leg.assigned_resource {
                    ctx.reservations.push(Reservation {
                        resource: r.clone(),
                        plan_id: plan.plan_id.clone(),
                        start: leg.planned_start,
                        end: leg.planned_end,
                    });
                }
                if leg.is_air() {
                    for (v, tick) in [(&leg.origin, leg.planned_start), (&leg.destination, leg.planned_end)] {
                        ctx.pad_slots.push(PadSlot {
                            vertiport: v.clone(),
                            tick,
                            plan_id: plan.plan_id.clone(),
                        });
                    }
                }
            }
        }
        ctx
    }

    /// Resources `trip` may plan with: charged, not in service, and free or
    /// already held by the trip.
    fn pool_for(&self, trip: &RequestId) -> Vec<crate::kernel::ResourceState> {
        use crate::kernel::ResourceStatus::*;
        self.world
            .resources
            .values()
            .filter(|r| r.battery > 0 && matches!(r.status, Idle | Reserved))
            .filter(|r| match self.owners.get(&r.id) {
                None => r.status == Idle,
                Some(o) => o == trip,
            })
            .cloned()
            .collect()
    }

    pub fn metrics(&self) -> RunMetrics {
        let done: Vec<Tick> = self
            .trips
            .values()
            .filter(|t| t.state == TripState::Completed)
            .filter_map(|t| Some(t.finished_at? - t.departed_at?))
            .collect();
        RunMetrics {
            tick: self.world.clock,
            trips: self.trips.len(),
            completed: self.trips.values().filter(|t| t.state == TripState::Completed).count(),
            aborted: self.trips.values().filter(|t| t.state == TripState::Aborted).count(),
            approvals: self.approvals.len(),
            fallbacks: self.fallbacks,
            revisions: self.revisions,
            mean_door_to_door: (!done.is_empty())
                .then(|| done.iter().sum::<Tick>() as f64 / done.len() as f64),
            messages: self.registry.counters(),
            coordination: self.coordination.snapshot(),
        }
    }

    pub fn trips(&self) -> Vec<TripView> {
        self.trips
            .values()
            .map(|t| TripView {
                request_id: t.request_id.clone(),
                passenger: t.passenger.clone(),
                state: t.state,
                plan_id: t.plan.as_ref().map(|p| p.plan_id.clone()),
                revision: t.plan.as_ref().map(|p| p.revision),
                current_leg: t
                    .current
                    .and_then(|i| t.plan.as_ref().and_then(|p| p.legs.get(i)))
                    .map(|l| l.leg_id.clone()),
                legs_done: t.done,
                hold_until: t.hold_until,
                priority: t.priority,
            })
            .collect()
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let world_json = serde_json::to_vec(&self.world).expect("world serializes");
        StateSnapshot {
            tick: self.world.clock,
            finished: self.finished.is_some(),
            world_digest: sha256_hex(&world_json),
            world: self.world.clone(),
            trips: self.trips(),
            pending_approvals: self
                .pending_approvals()
                .into_iter()
                .map(|a| a.approval_id)
                .collect(),
            log_len: self.log.len(),
        }
    }

    fn sub_for(&self, leg: &crate::reasoning::Leg) -> HolonId {
        if leg.is_air() {
            self.air.clone()
        } else {
            self.ground.clone()
        }
    }

    /// Resources the trip still needs: remaining legs of its active plan,
    /// the proposal and fallback under the gate, and the vehicle in use.
    fn needed_by(&self, trip: &Trip) -> BTreeSet<ResourceId> {
        let mut out = BTreeSet::new();
        if trip.state.is_terminal() {
            if let (Some(i), Some(p)) = (trip.current, &trip.plan) {
                out.extend(p.legs[i].assigned_resource.clone());
            }
            return out;
        }
        if let Some(p) = &trip.plan {
            let from = trip.current.unwrap_or(trip.done).min(trip.done);
            for l in p.legs.iter().skip(from) {
                out.extend(l.assigned_resource.clone());
            }
        }
        if let Some(g) = &trip.gate {
            for l in g.plan.legs.iter().skip(g.from) {
                out.extend(l.assigned_resource.clone());
            }
            if let Some(f) = &g.fallback {
                for l in f.legs.iter().skip(g.from) {
                    out.extend(l.assigned_resource.clone());
                }
            }
        }
        out
    }

    /// Reconciles resource ownership with what `rid` still needs.
    fn sync_reservations(&mut self, rid: &RequestId) {
        use crate::kernel::ResourceStatus::*;
        let Some(trip) = self.trips.get(rid) else { return };
        let needed = self.needed_by(trip);
        let owned: Vec<ResourceId> = self
            .owners
            .iter()
            .filter(|(_, o)| *o == rid)
            .map(|(r, _)| r.clone())
            .collect();
        for r in owned {
            if !needed.contains(&r) {
                self.owners.remove(&r);
                if let Some(res) = self.world.resources.get_mut(&r) {
                    if res.status == Reserved {
                        res.status = Idle;
                    }
                }
            }
        }
        for r in needed {
            if self.owners.get(&r).is_some_and(|o| o != rid) {
                continue;
            }
            if let Some(res) = self.world.resources.get_mut(&r) {
                if matches!(res.status, Idle | Reserved | InService) {
                    self.owners.insert(r.clone(), rid.clone());
                    if res.status == Idle {
                        res.status = Reserved;
                    }
                }
            }
        }
    }
}

/// Per-strategy result of [`run_comparison`].
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub metrics: CoordinationMetrics,
    pub run: RunMetrics,
    pub log_hash: String,
    #[serde(skip)]
    pub log: String,
}

/// Runs the same scenario and seed once per strategy.
pub fn run_comparison(
    scenario: &Scenario,
    strategies: &[StrategyKind],
    script: &[ScriptedAction],
    seed: Option<u64>,
) -> Result<Vec<ComparisonRow>, SchemaError> {
    strategies
        .iter()
        .map(|&strategy| {
            let mut sim = Simulation::new(
                scenario,
                SimOptions {
                    seed,
                    strategy,
                    script: script.to_vec(),
                    ..Default::default()
                },
            )?;
            sim.run();
            Ok(ComparisonRow {
                metrics: sim.coordination.snapshot(),
                run: sim.metrics(),
                log_hash: sim.log.hash(),
                log: sim.log.to_ndjson(),
            })
        })
        .collect()
}
