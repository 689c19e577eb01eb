//! Sub-supervisors and task holons: leg execution edge by edge.

use serde_json::{json, Value};

use super::supervisor::settle;
use super::{Running, SimEvent, Simulation, TaskRun, TripState};
use crate::holon::{CapabilityDescriptor, HolonSpec, Message, MessageKind, Role};
use crate::kernel::{EdgeId, Location, NodeId, ResourceStatus, Route, Tick};

impl Simulation {
    pub(super) fn on_sub_supervisor(&mut self, msg: Message) {
        let p = &msg.payload;
        match msg.kind {
            MessageKind::Command => {
                let task = p["task"].as_str().unwrap_or("").to_owned();
                match p["action"].as_str().unwrap_or("") {
                    "execute_leg" => self.register_task(&msg, &task),
                    "start_leg" => {
                        let token = p["token"].as_u64().unwrap_or(0);
                        let at = p["at"].as_u64().unwrap_or(0).max(self.world.clock);
                        if let Some(tr) = self.tasks.get_mut(&task) {
                            if tr.run.is_none() {
                                tr.token = token;
                                self.queue.push(at, SimEvent::LegStart { task, token });
                            }
                        }
                    }
                    "cancel_leg" if self.tasks.get(&task).is_some_and(|tr| tr.run.is_none()) => {
                        self.retire_task(&task);
                    }
                    _ => {}
                }
            }
            MessageKind::Status => {
                let (sub, root) = (msg.recipient.clone(), self.root.clone());
                self.send(&sub, &root, MessageKind::Status, msg.payload.clone(), Some(msg.id));
            }
            _ => {}
        }
    }

    fn register_task(&mut self, msg: &Message, task: &str) {
        let p = &msg.payload;
        let (Some(rid), Some(leg_id)) = (p["request_id"].as_str(), p["leg_id"].as_str()) else {
            return;
        };
        if self.tasks.contains_key(task) {
            return;
        }
        let mode = p["mode"].as_str().unwrap_or("leg");
        let spec = HolonSpec::new(task, Role::Task)
            .capability(CapabilityDescriptor::new(format!("execute.{mode}")));
        let sub = msg.recipient.clone();
        match self.registry.register(spec, Some(&sub)) {
            Ok(holon) => {
                self.log.push(
                    self.world.clock,
                    "holon_registered",
                    json!({"id": holon, "role": Role::Task, "capabilities": [format!("execute.{mode}")]}),
                );
                self.tasks.insert(
                    task.to_owned(),
                    TaskRun {
                        holon,
                        sub,
                        request_id: rid.into(),
                        leg_id: leg_id.to_owned(),
                        token: 0,
                        run: None,
                    },
                );
            }
            Err(e) => {
                self.log.push(
                    self.world.clock,
                    "task_rejected",
                    json!({"task": task, "error": e.to_string()}),
                );
            }
        }
    }

    fn retire_task(&mut self, task: &str) {
        let Some(tr) = self.tasks.remove(task) else {
            return;
        };
        if let Ok(report) = self.registry.detach(&tr.holon) {
            self.log.push(
                self.world.clock,
                "holon_detached",
                json!({"id": tr.holon, "removed": report.removed.len(), "dropped_messages": report.dropped_messages}),
            );
        }
    }

    /// Sends a task status to its sub-supervisor and records it.
    fn emit(&mut self, task: &str, event: &str, extra: Value) {
        let Some(tr) = self.tasks.get(task) else { return };
        let Some(run) = &tr.run else { return };
        let mut payload = json!({
            "event": event,
            "task": task,
            "request_id": tr.request_id,
            "plan_id": run.plan_id,
            "revision": run.revision,
            "leg_id": run.leg.leg_id,
            "leg_index": run.leg_index,
            "mode": run.leg.mode,
            "resource": run.leg.assigned_resource,
        });
        if let (Some(o), Some(e)) = (payload.as_object_mut(), extra.as_object()) {
            o.extend(e.clone());
        }
        let (from, to) = (tr.holon.clone(), tr.sub.clone());
        self.log.push(self.world.clock, event, payload.clone());
        self.send(&from, &to, MessageKind::Status, payload, None);
    }

    pub(super) fn on_leg_start(&mut self, task: &str, token: u64) {
        let t = self.world.clock;
        let Some(tr) = self.tasks.get(task) else { return };
        if tr.token != token || tr.run.is_some() {
            return;
        }
        let rid = tr.request_id.clone();
        let leg_id = tr.leg_id.clone();
        let task_holon = tr.holon.clone();
        let Some(trip) = self.trips.get_mut(&rid) else {
            return;
        };
        if trip.state != TripState::Active || trip.current.is_some() {
            return;
        }
        let Some(plan) = trip.plan.as_mut() else { return };
        let Some((idx, _)) = plan.leg(&leg_id) else { return };
        if idx != trip.done {
            return;
        }
        let d = plan.legs[idx].duration();
        plan.legs[idx].planned_start = t;
        plan.legs[idx].planned_end = t + d;
        settle(plan, idx + 1, t + d);
        let leg = plan.legs[idx].clone();
        let (plan_id, revision) = (plan.plan_id.clone(), plan.revision);
        trip.departed_at.get_or_insert(t);
        trip.current = Some(idx);
        let tr = self.tasks.get_mut(task).expect("present");
        tr.run = Some(Running {
            nodes: vec![leg.origin.clone()],
            edges: Vec::new(),
            leg: leg.clone(),
            leg_index: idx,
            plan_id,
            revision,
            edge_idx: 0,
            ticks: 0,
            fault: false,
        });
        let _ = self.registry.set_assignment(&task_holon, Some(leg_id));
        self.emit(task, "leg_started", json!({"origin": leg.origin, "destination": leg.destination}));
        if let Some(r) = &leg.assigned_resource {
            let problem = match self.world.resources.get(r) {
                None => Some("unknown resource".to_owned()),
                Some(res) if res.battery == 0 => Some("no charge".to_owned()),
                Some(res) if !matches!(res.status, ResourceStatus::Idle | ResourceStatus::Reserved) => {
                    Some(format!("resource is {:?}", res.status))
                }
                Some(_) if self.owners.get(r).is_some_and(|o| o != &rid) => {
                    Some("held by another trip".to_owned())
                }
                Some(_) => None,
            };
            if let Some(detail) = problem {
                self.fault(task, &detail);
                return;
            }
            let res = self.world.resources.get_mut(r).expect("checked");
            // Repositioning to the pickup point is folded into the wait
            // before the leg starts.
            res.location = Location::Node(leg.origin.clone());
            res.status = ResourceStatus::InService;
            res.assigned_task = Some(task.to_owned());
            self.owners.insert(r.clone(), rid.clone());
            if let Some(h) = self.resource_holons.get(r).cloned() {
                let _ = self.registry.set_assignment(&h, Some(task.to_owned()));
            }
        }
        self.advance(task);
    }

    fn fault(&mut self, task: &str, detail: &str) {
        if let Some(run) = self.tasks.get_mut(task).and_then(|t| t.run.as_mut()) {
            run.fault = true;
        }
        self.emit(task, "resource_fault", json!({"detail": detail}));
        self.block(task, detail, true);
    }

    /// Schedules the next edge or finishes the leg.
    fn advance(&mut self, task: &str) {
        let t = self.world.clock;
        let Some(tr) = self.tasks.get(task) else { return };
        let Some(run) = &tr.run else { return };
        let terminal = self
            .trips
            .get(&tr.request_id)
            .is_none_or(|trip| trip.state.is_terminal());
        if terminal {
            self.block(task, "trip_closed", false);
            return;
        }
        if run.edge_idx >= run.leg.route.edges.len() {
            self.complete(task);
            return;
        }
        let edge_id = run.leg.route.edges[run.edge_idx].clone();
        let here = run.nodes.last().expect("origin").clone();
        let mode = run.leg.mode;
        let resource = run.leg.assigned_resource.clone();
        let Some(edge) = self.graph.edge(&edge_id) else {
            self.block(task, "unknown edge", false);
            return;
        };
        let Some(base) = self.world.conditions().travel_time(edge) else {
            self.block(task, &format!("edge {edge_id} not admissible"), false);
            return;
        };
        let Some(to) = edge.other(&here).cloned() else {
            self.block(task, "route is not contiguous", false);
            return;
        };
        let travel = base * mode.time_factor();
        if let Some(r) = &resource {
            let res = &self.world.resources[r];
            let need = self.world.battery.required(res.kind, travel);
            if u64::from(res.battery) < need {
                self.fault(task, &format!("battery {} below {need} needed", res.battery));
                return;
            }
        }
        self.queue.push(
            t + travel,
            SimEvent::Move {
                task: task.to_owned(),
                edge: edge_id,
                to,
                ticks: travel,
            },
        );
    }

    pub(super) fn on_move(&mut self, task: &str, edge: &EdgeId, to: &NodeId, ticks: Tick) {
        let t = self.world.clock;
        let Some(tr) = self.tasks.get_mut(task) else { return };
        let Some(run) = tr.run.as_mut() else { return };
        run.edge_idx += 1;
        run.edges.push(edge.clone());
        run.nodes.push(to.clone());
        run.ticks += ticks;
        let more = run.edge_idx < run.leg.route.edges.len();
        let resource = run.leg.assigned_resource.clone();
        let edge_index = run.edge_idx - 1;
        let rid = tr.request_id.clone();
        let mut battery = None;
        if let Some(r) = &resource {
            if let Ok(b) = self.world.complete_move(r, to, ticks) {
                battery = Some(b);
            }
        }
        if let Some(p) = self
            .trips
            .get(&rid)
            .and_then(|trip| self.passengers.get_mut(&trip.passenger))
        {
            p.location = to.clone();
        }
        self.log.push(
            t,
            "move_completed",
            json!({"task": task, "resource": resource, "edge": edge, "to": to, "ticks": ticks, "battery": battery}),
        );
        self.emit(
            task,
            "leg_progress",
            json!({"edge": edge, "node": to, "edge_index": edge_index, "battery": battery}),
        );
        if battery == Some(0) && more {
            self.fault(task, "battery depleted");
            return;
        }
        self.advance(task);
    }

    fn traversed(&self, task: &str) -> Option<Route> {
        let run = self.tasks.get(task)?.run.as_ref()?;
        Some(Route {
            nodes: run.nodes.clone(),
            edges: run.edges.clone(),
            total_time: run.ticks,
        })
    }

    fn complete(&mut self, task: &str) {
        let t = self.world.clock;
        let Some(tr) = self.tasks.get(task) else { return };
        let Some(run) = &tr.run else { return };
        let rid = tr.request_id.clone();
        let idx = run.leg_index;
        let ticks = run.ticks;
        let resource = run.leg.assigned_resource.clone();
        if let Some(plan) = self.trips.get_mut(&rid).and_then(|trip| trip.plan.as_mut()) {
            if let Some(leg) = plan.legs.get_mut(idx) {
                leg.planned_end = t.max(leg.planned_start + 1);
            }
            settle(plan, idx + 1, t);
        }
        self.emit(task, "leg_completed", json!({"ticks": ticks}));
        if let Some(r) = resource {
            let reused = self
                .trips
                .get(&rid)
                .and_then(|trip| trip.plan.as_ref())
                .is_some_and(|p| {
                    p.legs
                        .iter()
                        .skip(idx + 1)
                        .any(|l| l.assigned_resource.as_ref() == Some(&r))
                });
            self.release(&r, reused);
        }
        self.retire_task(task);
    }

    fn block(&mut self, task: &str, detail: &str, lost: bool) {
        let Some(tr) = self.tasks.get(task) else { return };
        let rid = tr.request_id.clone();
        let resource = tr.run.as_ref().and_then(|r| r.leg.assigned_resource.clone());
        let traversed = self.traversed(task);
        let open = self
            .trips
            .get(&rid)
            .is_some_and(|trip| !trip.state.is_terminal());
        self.emit(
            task,
            "leg_blocked",
            json!({"detail": detail, "resource_lost": lost, "traversed": traversed}),
        );
        if let Some(r) = resource {
            let in_use = self.world.resources.get(&r).is_some_and(|res| {
                res.assigned_task.as_deref() == Some(task)
                    || (res.status != ResourceStatus::InService && self.owners.get(&r) == Some(&rid))
            });
            if in_use {
                self.release(&r, open && !lost);
            }
        }
        self.retire_task(task);
    }

    /// Ends a resource's service. A kept resource stays reserved for the
    /// trip; otherwise it is freed.
    fn release(&mut self, r: &crate::kernel::ResourceId, keep: bool) {
        if let Some(res) = self.world.resources.get_mut(r) {
            res.assigned_task = None;
            if matches!(res.status, ResourceStatus::InService | ResourceStatus::Reserved) {
                res.status = if keep {
                    ResourceStatus::Reserved
                } else {
                    ResourceStatus::Idle
                };
            }
        }
        if !keep {
            self.owners.remove(r);
        }
        if let Some(h) = self.resource_holons.get(r).cloned() {
            let _ = self.registry.set_assignment(&h, None);
        }
    }

}
