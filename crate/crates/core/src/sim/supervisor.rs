//! Supervisor, planner and safety-gate handlers.

use serde_json::{json, Value};

use super::{PendingGate, Simulation, Trip, TripState};
use crate::federation::{conforms, middle_hops, route_conversation, Need};
use crate::holon::{Message, MessageKind};
use crate::holons::{
    ground_fallback, planner_decompose, planner_revise, task_id, ApprovalRequest, Decision,
    Proposal, RiskClass,
};
use crate::kernel::{Disruption, KernelEvent, ResourceKind, ResourceStatus, Tick};
use crate::reasoning::{
    affected_legs, plan_violations, validate_plan, AdjustmentKind, Leg, Plan, PlanStatus,
    ReasoningFailure, RequestId, RevisionTrigger, ScheduleAdjustment, TaskSpec, TriggerCause,
    TripProgress,
};

fn request_id(payload: &Value) -> Option<RequestId> {
    payload
        .get("request_id")
        .and_then(Value::as_str)
        .map(RequestId::from)
}

fn field<T: serde::de::DeserializeOwned>(payload: &Value, key: &str) -> Option<T> {
    payload
        .get(key)
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

pub(super) fn leg_summary(legs: &[Leg]) -> Value {
    Value::Array(
        legs.iter()
            .map(|l| {
                json!({
                    "leg_id": l.leg_id,
                    "mode": l.mode,
                    "origin": l.origin,
                    "destination": l.destination,
                    "resource": l.assigned_resource,
                    "planned_start": l.planned_start,
                    "planned_end": l.planned_end,
                })
            })
            .collect(),
    )
}

/// Pushes legs from `from` later where needed so none starts before
/// `not_before` or before its predecessor ends.
pub(super) fn settle(plan: &mut Plan, from: usize, not_before: Tick) {
    let mut t = not_before;
    for leg in plan.legs.iter_mut().skip(from) {
        if leg.planned_start < t {
            let d = leg.duration();
            leg.planned_start = t;
            leg.planned_end = t + d;
        }
        t = leg.planned_end;
    }
}

fn touches(d: &Disruption, legs: &[Leg], graph: &crate::kernel::CityGraph) -> bool {
    let edges = d.affected_edges(graph);
    let nodes = d.target.nodes();
    legs.iter().any(|l| {
        l.route.edges.iter().any(|e| edges.contains(e))
            || l.route.nodes.iter().any(|n| nodes.contains(&n))
    })
}

impl Simulation {
    pub(super) fn on_utterance(&mut self, passenger: &str, text: &str, id: RequestId) {
        let t = self.world.clock;
        self.log.push(
            t,
            "utterance",
            json!({"passenger": passenger, "request_id": id, "text": text}),
        );
        let Some(p) = self.passengers.get(passenger).cloned() else {
            return;
        };
        let mut ctx = self.ctx_for(None);
        ctx.passenger_location = Some(p.location.clone());
        let root = self.root.clone();
        if let Some(active) = p.active.clone() {
            match self.layer.interpret_update(text, &active, &ctx) {
                Ok(adj) => {
                    self.send(
                        &p.holon,
                        &root,
                        MessageKind::Request,
                        json!({"action": "update", "request_id": active, "adjustment": adj}),
                        None,
                    );
                }
                Err(f) => self.clarification(passenger, &active, f),
            }
            return;
        }
        match self.layer.parse_request(text, &p.holon, id.clone(), &ctx) {
            Ok(spec) => {
                if let Some(p) = self.passengers.get_mut(passenger) {
                    p.active = Some(id.clone());
                }
                self.send(
                    &p.holon,
                    &root,
                    MessageKind::Request,
                    json!({"action": "trip", "request_id": id, "spec": spec}),
                    None,
                );
            }
            Err(f) => self.clarification(passenger, &id, f),
        }
    }

    fn clarification(&mut self, passenger: &str, rid: &RequestId, f: ReasoningFailure) {
        self.log.push(
            self.world.clock,
            "clarification_needed",
            json!({"passenger": passenger, "request_id": rid, "reason": f}),
        );
    }

    pub(super) fn on_supervisor(&mut self, msg: Message) {
        let p = &msg.payload;
        let action = p.get("action").and_then(Value::as_str).unwrap_or("");
        let topic = p.get("topic").and_then(Value::as_str).unwrap_or("");
        match msg.kind {
            MessageKind::Request if action == "trip" => self.new_trip(&msg),
            MessageKind::Request if action == "update" => self.on_update(&msg),
            MessageKind::Propose => self.on_proposal(&msg),
            MessageKind::Inform if msg.sender == self.planner => self.on_planner_inform(&msg),
            MessageKind::Accept | MessageKind::Reject if topic == "approval" => {
                self.on_decision(&msg)
            }
            MessageKind::Status => self.on_status(&msg),
            _ => {}
        }
    }

    fn new_trip(&mut self, msg: &Message) {
        let (Some(rid), Some(spec)) = (request_id(&msg.payload), field::<TaskSpec>(&msg.payload, "spec"))
        else {
            return;
        };
        let passenger = msg.sender.name().to_owned();
        let trip = Trip {
            request_id: rid.clone(),
            passenger,
            holon: msg.sender.clone(),
            spec: spec.clone(),
            state: TripState::Planning,
            plan: None,
            requested_at: self.world.clock,
            done: 0,
            current: None,
            hold_until: 0,
            cancel_requested: false,
            priority: false,
            departed_at: None,
            finished_at: None,
            gate: None,
            deferred_block: None,
            start_token: 0,
        };
        self.trips.insert(rid.clone(), trip);
        let (root, planner) = (self.root.clone(), self.planner.clone());
        self.send(
            &root,
            &planner,
            MessageKind::Request,
            json!({"action": "plan", "request_id": rid, "spec": spec}),
            Some(msg.id),
        );
    }

    pub(super) fn on_planner(&mut self, msg: Message) {
        if msg.kind != MessageKind::Request {
            return;
        }
        let Some(rid) = request_id(&msg.payload) else {
            return;
        };
        let Some(trip) = self.trips.get(&rid) else {
            return;
        };
        if trip.state.is_terminal() {
            return;
        }
        let spec = trip.spec.clone();
        let ctx = self.ctx_for(Some(&rid));
        let pool = self.pool_for(&rid);
        let refs: Vec<_> = pool.iter().collect();
        let action = msg.payload["action"].as_str().unwrap_or("");
        let (outcome, failure_topic) = match action {
            "plan" => (
                planner_decompose(&spec, &ctx, &mut self.layer, &refs),
                "no_feasible_plan",
            ),
            "revise" => {
                let (Some(trigger), Some(plan)) = (
                    field::<RevisionTrigger>(&msg.payload, "trigger"),
                    trip.plan.clone(),
                ) else {
                    return;
                };
                (
                    planner_revise(&plan, &spec, &trigger, &ctx, &mut self.layer, &refs),
                    "no_feasible_revision",
                )
            }
            _ => return,
        };
        let (planner, root) = (self.planner.clone(), self.root.clone());
        match outcome {
            Ok(prop) => {
                self.record_proposal(&rid, &prop);
                let from = if action == "plan" {
                    0
                } else {
                    let kept = field::<RevisionTrigger>(&msg.payload, "trigger")
                        .map_or(0, |t| t.progress.kept);
                    prop.plan.executed_legs.max(kept)
                };
                self.send(
                    &planner,
                    &root,
                    MessageKind::Propose,
                    json!({"request_id": rid, "plan": prop.plan, "from": from}),
                    Some(msg.id),
                );
            }
            Err(f) => {
                let topic = if f == ReasoningFailure::NotAffected {
                    "not_affected"
                } else {
                    failure_topic
                };
                self.send(
                    &planner,
                    &root,
                    MessageKind::Inform,
                    json!({"topic": topic, "request_id": rid, "reason": f.to_string()}),
                    Some(msg.id),
                );
            }
        }
    }

    fn record_proposal(&mut self, rid: &RequestId, prop: &Proposal) {
        let t = self.world.clock;
        for s in &prop.substitutions {
            self.log.push(
                t,
                "substitution",
                json!({"request_id": rid, "plan_id": prop.plan.plan_id, "leg_id": s.leg_id, "from": s.from, "to": s.to}),
            );
        }
        for a in &prop.allocations {
            self.log.push(
                t,
                "allocation",
                json!({
                    "request_id": rid,
                    "plan_id": prop.plan.plan_id,
                    "revision": prop.plan.revision,
                    "task": a.task,
                    "resource": a.resource,
                    "score": a.score,
                    "reach": a.reach,
                    "alternatives_considered": a.alternatives_considered,
                }),
            );
            let Some(res) = self.world.resources.get(&a.resource) else {
                continue;
            };
            let pattern = match res.kind {
                ResourceKind::Scooter => "ride.scooter",
                ResourceKind::GroundTaxi => "ride.ground_taxi",
                ResourceKind::AirTaxi => "fly.air_taxi",
            };
            let mut need = Need::new(pattern);
            if let Some(h) = self.resource_holons.get(&a.resource) {
                need = need.preferring(h.clone());
            }
            match route_conversation(&self.strategy, &need, &self.planner, &self.registry) {
                Ok(o) => {
                    self.coordination.record(&self.strategy, &o);
                    let hops: Vec<[String; 2]> = o
                        .transcript
                        .iter()
                        .map(|h| [h.from.to_string(), h.to.to_string()])
                        .collect();
                    self.log.push(
                        t,
                        "coordination",
                        json!({
                            "request_id": rid,
                            "task": a.task,
                            "pattern": pattern,
                            "provider": o.provider,
                            "candidates": o.candidates.len(),
                            "messages": o.transcript.len(),
                            "discovery_latency": o.discovery_latency,
                            "middle_hops": middle_hops(&self.strategy, &o),
                            "conforms": conforms(&self.strategy, &o),
                            "hops": hops,
                        }),
                    );
                    self.conversations.push(o);
                }
                Err(e) => {
                    self.coordination.record_failure();
                    self.log.push(
                        t,
                        "coordination_failed",
                        json!({"request_id": rid, "task": a.task, "pattern": pattern, "error": e.to_string()}),
                    );
                }
            }
        }
    }

    fn on_planner_inform(&mut self, msg: &Message) {
        let Some(rid) = request_id(&msg.payload) else {
            return;
        };
        let topic = msg.payload["topic"].as_str().unwrap_or("").to_owned();
        let Some(trip) = self.trips.get_mut(&rid) else {
            return;
        };
        if trip.state.is_terminal() {
            return;
        }
        if topic == "not_affected" {
            trip.state = TripState::Active;
            let idle = trip.current.is_none();
            self.log.push(
                self.world.clock,
                "replan_not_needed",
                json!({"request_id": rid}),
            );
            if idle {
                self.start_next(&rid);
            }
        } else {
            self.abort(&rid, &topic);
        }
    }

    fn gate_step(&mut self, rid: &RequestId, plan: &Plan, step: u8, status: &str, detail: Value) {
        self.log.push(
            self.world.clock,
            "gate_step",
            json!({
                "request_id": rid,
                "plan_id": plan.plan_id,
                "revision": plan.revision,
                "step": step,
                "status": status,
                "passed": matches!(status, "passed" | "skipped" | "approved" | "overridden"),
                "detail": detail,
            }),
        );
    }

    fn gate_outcome(&mut self, rid: &RequestId, plan: &Plan, outcome: &str, extra: Value) {
        let mut rec = json!({
            "request_id": rid,
            "plan_id": plan.plan_id,
            "revision": plan.revision,
            "outcome": outcome,
        });
        if let (Some(o), Some(e)) = (rec.as_object_mut(), extra.as_object()) {
            o.extend(e.clone());
        }
        self.log.push(self.world.clock, "gate_outcome", rec);
    }

    fn on_proposal(&mut self, msg: &Message) {
        let (Some(rid), Some(plan)) = (request_id(&msg.payload), field::<Plan>(&msg.payload, "plan"))
        else {
            return;
        };
        let from = msg.payload.get("from").and_then(Value::as_u64).unwrap_or(0) as usize;
        let Some(trip) = self.trips.get_mut(&rid) else {
            return;
        };
        if !matches!(trip.state, TripState::Planning | TripState::Replanning) {
            return;
        }
        trip.state = TripState::Gating;
        trip.gate = Some(PendingGate {
            plan: plan.clone(),
            from,
            approval: None,
            fallback: None,
            request_msg: None,
        });
        self.sync_reservations(&rid);
        self.run_gate(&rid, plan, from);
    }

    fn structural_problems(&self, rid: &RequestId, plan: &Plan) -> Vec<String> {
        let trip = &self.trips[rid];
        let ctx = self.ctx_for(Some(rid));
        let mut out = plan_violations(plan, &trip.spec, &self.graph);
        out.extend(
            validate_plan(plan, &self.rules, &ctx)
                .violations
                .into_iter()
                .map(|v| format!("{:?} on {}: {}", v.rule, v.leg, v.detail)),
        );
        out
    }

    fn availability_problems(&self, rid: &RequestId, plan: &Plan, from: usize) -> Vec<String> {
        let trip = &self.trips[rid];
        let cond = self.world.conditions();
        let mut out = Vec::new();
        for (i, leg) in plan.legs.iter().enumerate().skip(from) {
            if trip.current == Some(i) {
                continue;
            }
            if let Some(r) = &leg.assigned_resource {
                match self.world.resources.get(r) {
                    None => out.push(format!("{}: unknown resource {r}", leg.leg_id)),
                    Some(res) => {
                        if res.battery == 0 {
                            out.push(format!("{}: {r} has no charge", leg.leg_id));
                        }
                        let mine = self.owners.get(r).is_none_or(|o| o == rid);
                        let usable = match res.status {
                            ResourceStatus::Idle | ResourceStatus::Reserved => true,
                            ResourceStatus::InService => self.owners.get(r) == Some(rid),
                            _ => false,
                        };
                        if !mine {
                            out.push(format!("{}: {r} is held by another trip", leg.leg_id));
                        } else if !usable {
                            out.push(format!("{}: {r} is {:?}", leg.leg_id, res.status));
                        }
                    }
                }
            }
            for e in &leg.route.edges {
                let ok = self.graph.edge(e).is_some_and(|edge| cond.is_admissible(edge));
                if !ok {
                    out.push(format!("{}: edge {e} is not admissible", leg.leg_id));
                }
            }
        }
        out
    }

    fn risk(&self, rid: &RequestId, plan: &Plan, from: usize) -> RiskClass {
        let current = self.trips[rid].current;
        let rest: Vec<Leg> = plan
            .legs
            .iter()
            .enumerate()
            .skip(from)
            .filter(|(i, _)| Some(*i) != current)
            .map(|(_, l)| l.clone())
            .collect();
        let air = rest.iter().any(Leg::is_air);
        let disrupted = plan.revision > 0
            && self
                .world
                .active_disruptions()
                .any(|d| touches(d, &rest, &self.graph));
        if air || disrupted {
            RiskClass::High
        } else {
            RiskClass::Low
        }
    }

    /// Steps 1 and 2; returns false after rejecting.
    fn check_steps(&mut self, rid: &RequestId, plan: &Plan, from: usize) -> bool {
        let problems = self.structural_problems(rid, plan);
        let ok = problems.is_empty();
        self.gate_step(rid, plan, 1, if ok { "passed" } else { "failed" }, json!(problems));
        if !ok {
            self.gate_reject(rid, plan, "validation_failed");
            return false;
        }
        let problems = self.availability_problems(rid, plan, from);
        let ok = problems.is_empty();
        self.gate_step(rid, plan, 2, if ok { "passed" } else { "failed" }, json!(problems));
        if !ok {
            self.gate_reject(rid, plan, "resources_unavailable");
        }
        ok
    }

    fn run_gate(&mut self, rid: &RequestId, plan: Plan, from: usize) {
        if !self.check_steps(rid, &plan, from) {
            return;
        }
        let risk = self.risk(rid, &plan, from);
        if risk == RiskClass::Low {
            self.gate_step(rid, &plan, 3, "skipped", json!("low risk"));
            self.gate_outcome(rid, &plan, "cleared", json!({}));
            self.activate(rid, plan, from, "cleared");
            return;
        }
        let t = self.world.clock;
        let spec = self.trips[rid].spec.clone();
        let ctx = self.ctx_for(Some(rid));
        let pool = self.pool_for(rid);
        let refs: Vec<_> = pool.iter().collect();
        let fallback = ground_fallback(&plan, from, &spec, &ctx, &refs).map(|p| p.plan);
        self.next_approval += 1;
        let approval_id = format!("APR-{}", self.next_approval);
        let timeout_at = t + self.approval_timeout;
        self.approvals.insert(
            approval_id.clone(),
            ApprovalRequest {
                approval_id: approval_id.clone(),
                request_id: rid.clone(),
                plan_id: plan.plan_id.clone(),
                revision: plan.revision,
                risk_class: risk,
                submitted_at: t,
                timeout_at,
                plan: plan.clone(),
                fallback_plan: fallback.clone(),
                decision: None,
                decided_by: None,
                timed_out: false,
            },
        );
        self.log.push(
            t,
            "approval_requested",
            json!({
                "approval_id": approval_id,
                "request_id": rid,
                "plan_id": plan.plan_id,
                "revision": plan.revision,
                "risk_class": risk,
                "submitted_at": t,
                "timeout_at": timeout_at,
                "legs": leg_summary(&plan.legs),
                "fallback": fallback.as_ref().map(|f| json!({
                    "revision": f.revision,
                    "legs": leg_summary(&f.legs),
                    "arrival": f.arrival(),
                })),
            }),
        );
        self.gate_step(rid, &plan, 3, "pending", json!({"approval_id": approval_id}));
        let (root, op) = (self.root.clone(), self.operator.clone());
        let req = self.send(
            &root,
            &op,
            MessageKind::Request,
            json!({
                "action": "approve",
                "approval_id": approval_id,
                "request_id": rid,
                "plan_id": plan.plan_id,
                "revision": plan.revision,
                "timeout_at": timeout_at,
            }),
            None,
        );
        if let Some(g) = self.trips.get_mut(rid).and_then(|t| t.gate.as_mut()) {
            g.approval = Some(approval_id.clone());
            g.fallback = fallback;
            g.request_msg = req;
        }
        self.sync_reservations(rid);
        self.queue
            .push(timeout_at, super::SimEvent::ApprovalTimeout { approval_id });
    }

    fn gate_reject(&mut self, rid: &RequestId, plan: &Plan, reason: &str) {
        self.gate_outcome(rid, plan, "rejected", json!({"reason": reason}));
        if let Some(t) = self.trips.get_mut(rid) {
            t.gate = None;
        }
        self.abort(rid, "gate_rejected");
    }

    fn on_decision(&mut self, msg: &Message) {
        let Some(aid) = msg.payload["approval_id"].as_str().map(str::to_owned) else {
            return;
        };
        let decision = msg.payload["decision"].as_str().unwrap_or("").to_owned();
        let Some(a) = self.approvals.get(&aid).cloned() else {
            return;
        };
        let rid = a.request_id.clone();
        let open = a.is_pending()
            && self
                .trips
                .get(&rid)
                .and_then(|t| t.gate.as_ref())
                .is_some_and(|g| g.approval.as_deref() == Some(aid.as_str()));
        if !open {
            return;
        }
        let gate = self.trips[&rid].gate.clone().expect("open gate");
        let by = msg.sender.to_string();
        let t = self.world.clock;
        match decision.as_str() {
            "approve" => {
                self.decide(&aid, Decision::Approved, &by);
                self.log.push(
                    t,
                    "approval_decided",
                    json!({"approval_id": aid, "request_id": rid, "decision": "approved", "by": by}),
                );
                self.gate_step(&rid, &gate.plan, 3, "approved", json!({"approval_id": aid}));
                // The world may have moved on while the request waited.
                let stale = self.structural_problems(&rid, &gate.plan);
                if stale.is_empty() {
                    self.gate_outcome(&rid, &gate.plan, "cleared", json!({"approval_id": aid}));
                    self.activate(&rid, gate.plan, gate.from, "approved");
                    return;
                }
                let fallback = gate
                    .fallback
                    .filter(|fb| self.structural_problems(&rid, fb).is_empty());
                match fallback {
                    Some(fb) => {
                        self.gate_outcome(
                            &rid,
                            &gate.plan,
                            "fallback_activated",
                            json!({
                                "approval_id": aid,
                                "activated_revision": fb.revision,
                                "reason": "invalidated",
                                "problems": stale,
                            }),
                        );
                        self.fallbacks += 1;
                        self.activate(&rid, fb, gate.from, "fallback");
                    }
                    None => {
                        self.gate_outcome(
                            &rid,
                            &gate.plan,
                            "rejected",
                            json!({"approval_id": aid, "reason": "invalidated", "problems": stale}),
                        );
                        if let Some(tr) = self.trips.get_mut(&rid) {
                            tr.gate = None;
                        }
                        self.abort(&rid, "gate_rejected");
                    }
                }
            }
            "reject" => {
                self.decide(&aid, Decision::Rejected, &by);
                self.log.push(
                    t,
                    "approval_decided",
                    json!({"approval_id": aid, "request_id": rid, "decision": "rejected", "by": by}),
                );
                self.gate_step(&rid, &gate.plan, 3, "rejected", json!({"approval_id": aid}));
                self.gate_outcome(
                    &rid,
                    &gate.plan,
                    "rejected",
                    json!({"approval_id": aid, "reason": "operator"}),
                );
                if let Some(tr) = self.trips.get_mut(&rid) {
                    tr.gate = None;
                }
                self.abort(&rid, "rejected_by_operator");
            }
            "override" => {
                let Some(mut plan) = field::<Plan>(&msg.payload, "plan") else {
                    return;
                };
                plan.plan_id = gate.plan.plan_id.clone();
                plan.revision = gate.plan.revision + 1;
                plan.status = PlanStatus::Draft;
                plan.executed_legs = gate.plan.executed_legs;
                self.decide(
                    &aid,
                    Decision::Overridden {
                        plan_id: plan.plan_id.clone(),
                        revision: plan.revision,
                    },
                    &by,
                );
                self.log.push(
                    t,
                    "approval_decided",
                    json!({
                        "approval_id": aid,
                        "request_id": rid,
                        "decision": "overridden",
                        "by": by,
                        "revision": plan.revision,
                    }),
                );
                self.gate_step(&rid, &gate.plan, 3, "overridden", json!({"approval_id": aid}));
                if let Some(g) = self.trips.get_mut(&rid).and_then(|t| t.gate.as_mut()) {
                    g.plan = plan.clone();
                    g.approval = None;
                    g.fallback = None;
                }
                self.sync_reservations(&rid);
                if !self.check_steps(&rid, &plan, gate.from) {
                    return;
                }
                self.gate_step(&rid, &plan, 3, "overridden", json!({"approval_id": aid}));
                self.gate_outcome(
                    &rid,
                    &plan,
                    "cleared",
                    json!({"approval_id": aid, "override": true}),
                );
                self.activate(&rid, plan, gate.from, "override");
            }
            _ => {}
        }
    }

    fn decide(&mut self, aid: &str, d: Decision, by: &str) {
        if let Some(a) = self.approvals.get_mut(aid) {
            a.decision = Some(d);
            a.decided_by = Some(by.to_owned());
        }
    }

    pub(super) fn on_approval_timeout(&mut self, aid: &str) {
        let Some(a) = self.approvals.get_mut(aid) else {
            return;
        };
        if !a.is_pending() {
            return;
        }
        a.timed_out = true;
        let rid = a.request_id.clone();
        let Some(gate) = self.trips.get(&rid).and_then(|t| t.gate.clone()) else {
            return;
        };
        self.gate_step(&rid, &gate.plan, 3, "timeout", json!({"approval_id": aid}));
        match gate.fallback {
            Some(fb) => {
                self.gate_outcome(
                    &rid,
                    &gate.plan,
                    "fallback_activated",
                    json!({"approval_id": aid, "activated_revision": fb.revision}),
                );
                self.fallbacks += 1;
                self.activate(&rid, fb, gate.from, "fallback");
            }
            None => {
                self.gate_outcome(
                    &rid,
                    &gate.plan,
                    "rejected",
                    json!({"approval_id": aid, "reason": "timeout_without_fallback"}),
                );
                if let Some(t) = self.trips.get_mut(&rid) {
                    t.gate = None;
                }
                self.abort(&rid, "approval_timeout");
            }
        }
    }

    fn activate(&mut self, rid: &RequestId, mut plan: Plan, from: usize, via: &str) {
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(rid) else {
            return;
        };
        plan.status = PlanStatus::Active;
        if trip.plan.as_ref().is_some_and(|p| p.revision < plan.revision) {
            self.revisions += 1;
        }
        trip.gate = None;
        trip.state = TripState::Active;
        trip.done = trip.done.max(plan.executed_legs);
        let first = trip.current.map_or(trip.done, |c| c + 1).max(trip.done).max(from.min(plan.legs.len()));
        let not_before = match trip.current {
            Some(c) => plan.legs.get(c).map_or(t, |l| l.planned_end),
            None => t.max(trip.hold_until),
        };
        settle(&mut plan, first, not_before);
        trip.plan = Some(plan.clone());
        let passenger = trip.holon.clone();

        // Tasks for legs that no longer exist are withdrawn.
        let wanted: Vec<String> = plan.legs[first..]
            .iter()
            .map(|l| task_id(&plan.plan_id, &l.leg_id))
            .collect();
        let stale: Vec<(String, crate::holon::HolonId)> = self
            .tasks
            .iter()
            .filter(|(id, tr)| &tr.request_id == rid && tr.run.is_none() && !wanted.contains(id))
            .map(|(id, tr)| (id.clone(), tr.sub.clone()))
            .collect();
        let root = self.root.clone();
        for (task, sub) in stale {
            self.send(
                &root,
                &sub,
                MessageKind::Command,
                json!({"action": "cancel_leg", "task": task, "request_id": rid}),
                None,
            );
        }
        self.log.push(
            t,
            "plan_activated",
            json!({
                "request_id": rid,
                "plan_id": plan.plan_id,
                "revision": plan.revision,
                "from": first,
                "via": via,
                "legs": leg_summary(&plan.legs),
                "arrival": plan.arrival(),
            }),
        );
        for (i, leg) in plan.legs.iter().enumerate().skip(first) {
            let task = task_id(&plan.plan_id, &leg.leg_id);
            if self.tasks.contains_key(&task) {
                continue;
            }
            let sub = self.sub_for(leg);
            self.send(
                &root,
                &sub,
                MessageKind::Command,
                json!({
                    "action": "execute_leg",
                    "task": task,
                    "request_id": rid,
                    "leg_id": leg.leg_id,
                    "leg_index": i,
                    "mode": leg.mode,
                }),
                None,
            );
        }
        self.send(
            &root,
            &passenger,
            MessageKind::Inform,
            json!({
                "topic": "itinerary",
                "request_id": rid,
                "plan_id": plan.plan_id,
                "revision": plan.revision,
                "arrival": plan.arrival(),
            }),
            None,
        );
        self.sync_reservations(rid);
        let trip = self.trips.get_mut(rid).expect("present");
        if trip.cancel_requested && trip.current.is_none() {
            self.abort(rid, "cancelled");
            return;
        }
        if let Some(trigger) = trip.deferred_block.take() {
            self.request_revision(rid, trigger);
        } else if trip.current.is_none() {
            self.start_next(rid);
        }
    }

    pub(super) fn start_next(&mut self, rid: &RequestId) {
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(rid) else {
            return;
        };
        let Some(plan) = &trip.plan else { return };
        if trip.done >= plan.legs.len() {
            self.complete_trip(rid);
            return;
        }
        let leg = plan.legs[trip.done].clone();
        let task = task_id(&plan.plan_id, &leg.leg_id);
        let at = t.max(leg.planned_start).max(trip.hold_until);
        trip.start_token += 1;
        let token = trip.start_token;
        let sub = self.sub_for(&leg);
        let leg_id = leg.leg_id;
        let root = self.root.clone();
        self.send(
            &root,
            &sub,
            MessageKind::Command,
            json!({
                "action": "start_leg",
                "task": task,
                "request_id": rid,
                "leg_id": leg_id,
                "token": token,
                "at": at,
            }),
            None,
        );
    }

    fn request_revision(&mut self, rid: &RequestId, trigger: RevisionTrigger) {
        let Some(trip) = self.trips.get_mut(rid) else {
            return;
        };
        trip.state = TripState::Replanning;
        let (plan_id, revision) = trip
            .plan
            .as_ref()
            .map(|p| (p.plan_id.clone(), p.revision))
            .unwrap_or_default();
        let cause = match &trigger.cause {
            TriggerCause::Disruption { disruption } => json!({"disruption": disruption.id}),
            TriggerCause::Status { leg_id, event } => json!({"leg_id": leg_id, "event": event}),
        };
        self.log.push(
            self.world.clock,
            "replan_requested",
            json!({
                "request_id": rid,
                "plan_id": plan_id,
                "revision": revision,
                "cause": cause,
                "kept": trigger.progress.kept,
                "location": trigger.progress.location,
            }),
        );
        let (root, planner) = (self.root.clone(), self.planner.clone());
        self.send(
            &root,
            &planner,
            MessageKind::Request,
            json!({"action": "revise", "request_id": rid, "trigger": trigger}),
            None,
        );
    }

    fn on_status(&mut self, msg: &Message) {
        let p = &msg.payload;
        let Some(rid) = request_id(p) else { return };
        let event = p["event"].as_str().unwrap_or("");
        let idx = p.get("leg_index").and_then(Value::as_u64).map(|i| i as usize);
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(&rid) else {
            return;
        };
        match event {
            "leg_started" => trip.current = idx,
            "leg_completed" => {
                trip.current = None;
                if let Some(i) = idx {
                    trip.done = trip.done.max(i + 1);
                }
                if trip.state.is_terminal() {
                } else if trip.cancel_requested {
                    self.abort(&rid, "cancelled");
                } else if trip
                    .plan
                    .as_ref()
                    .is_some_and(|pl| trip.done >= pl.legs.len())
                    && trip.state == TripState::Active
                {
                    self.complete_trip(&rid);
                } else if trip.state == TripState::Active {
                    self.start_next(&rid);
                }
            }
            "leg_blocked" => {
                trip.current = None;
                if trip.state.is_terminal() {
                } else if trip.cancel_requested {
                    self.abort(&rid, "cancelled");
                } else {
                    let partial: Option<crate::kernel::Route> = field(p, "traversed");
                    let location = self
                        .passengers
                        .get(&trip.passenger)
                        .map(|x| x.location.clone())
                        .unwrap_or_else(|| trip.spec.origin.clone());
                    let trigger = RevisionTrigger {
                        cause: TriggerCause::Status {
                            leg_id: p["leg_id"].as_str().unwrap_or("").to_owned(),
                            event: event.to_owned(),
                        },
                        progress: TripProgress {
                            completed: trip.done,
                            kept: trip.done,
                            partial: partial.filter(|r| !r.is_empty()),
                            location,
                            ready_at: t,
                            resource_lost: p["resource_lost"].as_bool().unwrap_or(false),
                        },
                    };
                    if trip.state == TripState::Active {
                        self.request_revision(&rid, trigger);
                    } else {
                        trip.deferred_block = Some(trigger);
                    }
                }
            }
            _ => {}
        }
        self.sync_reservations(&rid);
    }

    fn complete_trip(&mut self, rid: &RequestId) {
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(rid) else {
            return;
        };
        trip.state = TripState::Completed;
        trip.finished_at = Some(t);
        if let Some(p) = trip.plan.as_mut() {
            p.status = PlanStatus::Completed;
        }
        let departed = trip.departed_at.unwrap_or(t);
        let rec = json!({
            "request_id": rid,
            "passenger": trip.passenger,
            "plan_id": trip.plan.as_ref().map(|p| p.plan_id.clone()),
            "revision": trip.plan.as_ref().map(|p| p.revision),
            "requested_at": trip.requested_at,
            "departed_at": departed,
            "arrived_at": t,
            "door_to_door": t - departed,
            "elapsed": t - trip.requested_at,
            "legs": trip.done,
        });
        let (holon, passenger) = (trip.holon.clone(), trip.passenger.clone());
        if let Some(p) = self.passengers.get_mut(&passenger) {
            if p.active.as_ref() == Some(rid) {
                p.active = None;
            }
        }
        self.log.push(t, "trip_completed", rec);
        let root = self.root.clone();
        self.send(
            &root,
            &holon,
            MessageKind::Inform,
            json!({"topic": "trip_completed", "request_id": rid}),
            None,
        );
        self.sync_reservations(rid);
    }

    pub(super) fn abort(&mut self, rid: &RequestId, reason: &str) {
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(rid) else {
            return;
        };
        if trip.state.is_terminal() {
            return;
        }
        let gate = trip.gate.take();
        trip.state = TripState::Aborted;
        trip.finished_at = Some(t);
        if let Some(p) = trip.plan.as_mut() {
            p.status = PlanStatus::Aborted;
        }
        let (holon, passenger) = (trip.holon.clone(), trip.passenger.clone());
        if let Some(aid) = gate.as_ref().and_then(|g| g.approval.clone()) {
            if self.approvals.get(&aid).is_some_and(ApprovalRequest::is_pending) {
                self.decide(&aid, Decision::Rejected, "system");
                let plan = gate.as_ref().expect("gate").plan.clone();
                self.gate_outcome(
                    rid,
                    &plan,
                    "rejected",
                    json!({"approval_id": aid, "reason": "trip_closed"}),
                );
            }
        }
        let pending: Vec<(String, crate::holon::HolonId)> = self
            .tasks
            .iter()
            .filter(|(_, tr)| &tr.request_id == rid && tr.run.is_none())
            .map(|(id, tr)| (id.clone(), tr.sub.clone()))
            .collect();
        let root = self.root.clone();
        for (task, sub) in pending {
            self.send(
                &root,
                &sub,
                MessageKind::Command,
                json!({"action": "cancel_leg", "task": task, "request_id": rid}),
                None,
            );
        }
        if let Some(p) = self.passengers.get_mut(&passenger) {
            if p.active.as_ref() == Some(rid) {
                p.active = None;
            }
        }
        self.log.push(
            t,
            "trip_aborted",
            json!({"request_id": rid, "passenger": passenger, "reason": reason}),
        );
        self.send(
            &root,
            &holon,
            MessageKind::Inform,
            json!({"topic": "trip_aborted", "request_id": rid, "reason": reason}),
            None,
        );
        self.sync_reservations(rid);
    }

    fn on_update(&mut self, msg: &Message) {
        let Some(adj) = field::<ScheduleAdjustment>(&msg.payload, "adjustment") else {
            return;
        };
        let rid = adj.request_id.clone();
        let t = self.world.clock;
        let Some(trip) = self.trips.get_mut(&rid) else {
            return;
        };
        if trip.state.is_terminal() {
            return;
        }
        let next = trip.current.map_or(trip.done, |c| c + 1).max(trip.done);
        let n = adj.magnitude.unwrap_or(0);
        let mut restart = false;
        match adj.kind {
            AdjustmentKind::Cancel => trip.cancel_requested = true,
            AdjustmentKind::Reprioritize => trip.priority = true,
            AdjustmentKind::DelayDeparture => {
                let planned = trip
                    .plan
                    .as_ref()
                    .and_then(|p| p.legs.get(next))
                    .map_or(0, |l| l.planned_start);
                trip.hold_until = t.max(planned).max(trip.hold_until) + n;
                if let Some(p) = trip.plan.as_mut() {
                    settle(p, next, trip.hold_until);
                }
                restart = true;
            }
            AdjustmentKind::AdvanceDeparture => {
                trip.hold_until = 0;
                if let Some(p) = trip.plan.as_mut() {
                    let mut prev_end = match next.checked_sub(1).and_then(|i| p.legs.get(i)) {
                        Some(l) if trip.current.is_some() => l.planned_end.max(t),
                        _ => t,
                    };
                    if let Some(first) = p.legs.get(next) {
                        let target = first.planned_start.saturating_sub(n).max(prev_end);
                        let delta = first.planned_start - target;
                        for leg in p.legs.iter_mut().skip(next) {
                            let d = leg.duration();
                            leg.planned_start = (leg.planned_start - delta).max(prev_end);
                            leg.planned_end = leg.planned_start + d;
                            prev_end = leg.planned_end;
                        }
                    }
                }
                restart = true;
            }
        }
        let hold = trip.hold_until;
        let next_start = trip
            .plan
            .as_ref()
            .and_then(|p| p.legs.get(next))
            .map(|l| l.planned_start);
        let idle = trip.current.is_none() && trip.state == TripState::Active;
        let cancel_now = trip.cancel_requested && trip.current.is_none();
        self.log.push(
            t,
            "schedule_adjusted",
            json!({
                "request_id": rid,
                "kind": adj.kind,
                "magnitude": adj.magnitude,
                "hold_until": hold,
                "next_leg_start": next_start,
            }),
        );
        if cancel_now {
            self.abort(&rid, "cancelled");
        } else if restart && idle {
            self.start_next(&rid);
        }
    }

    pub(super) fn on_kernel(&mut self, ev: KernelEvent) {
        let t = self.world.clock;
        match ev {
            KernelEvent::DisruptionActivated { id } => {
                let Some(d) = self.world.disruptions.get(&id).cloned() else {
                    return;
                };
                self.log.push(
                    t,
                    "disruption_activated",
                    json!({"id": d.id, "kind": d.kind, "target": d.target, "expiry": d.expiry}),
                );
                self.broadcast_disruption(&d, "active");
                let active: Vec<RequestId> = self
                    .trips
                    .iter()
                    .filter(|(_, tr)| tr.state == TripState::Active)
                    .map(|(id, _)| id.clone())
                    .collect();
                for rid in active {
                    self.check_impact(&rid, &d);
                }
            }
            KernelEvent::DisruptionExpired { id } => {
                if let Some(d) = self.world.expire_disruption(&id) {
                    self.log.push(t, "disruption_expired", json!({"id": id}));
                    self.broadcast_disruption(&d, "expired");
                }
            }
            KernelEvent::MoveCompleted { .. } => {}
        }
    }

    fn broadcast_disruption(&mut self, d: &Disruption, state: &str) {
        let root = self.root.clone();
        for sub in [self.ground.clone(), self.air.clone()] {
            self.send(
                &root,
                &sub,
                MessageKind::Inform,
                json!({"topic": "disruption", "id": d.id, "kind": d.kind, "state": state}),
                None,
            );
        }
    }

    fn check_impact(&mut self, rid: &RequestId, d: &Disruption) {
        let t = self.world.clock;
        let trip = &self.trips[rid];
        let Some(plan) = trip.plan.clone() else { return };
        let cond = self.world.conditions();
        let (kept, location, ready_at) = match trip.current {
            Some(c) => {
                let leg = &plan.legs[c];
                let task = task_id(&plan.plan_id, &leg.leg_id);
                let pos = self
                    .tasks
                    .get(&task)
                    .and_then(|tr| tr.run.as_ref())
                    .map_or(0, |r| r.edge_idx);
                let ahead_blocked = leg.route.edges.iter().skip(pos + 1).any(|e| {
                    !self
                        .graph
                        .edge(e)
                        .is_some_and(|edge| cond.is_admissible(edge))
                });
                if ahead_blocked {
                    // The running task will block at the edge boundary.
                    return;
                }
                (c + 1, leg.destination.clone(), leg.planned_end.max(t))
            }
            None => (
                trip.done,
                self.passengers
                    .get(&trip.passenger)
                    .map_or(trip.spec.origin.clone(), |p| p.location.clone()),
                t,
            ),
        };
        let ctx = self.ctx_for(Some(rid));
        if affected_legs(&plan, kept, &ctx).is_empty() {
            return;
        }
        let trigger = RevisionTrigger {
            cause: TriggerCause::Disruption {
                disruption: d.clone(),
            },
            progress: TripProgress {
                completed: trip.done,
                kept,
                partial: None,
                location,
                ready_at,
                resource_lost: false,
            },
        };
        self.request_revision(rid, trigger);
    }

}
