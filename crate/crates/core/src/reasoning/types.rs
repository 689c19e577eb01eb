use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rules::RuleSet;
use crate::holon::HolonId;
use crate::kernel::{
    BatteryModel, CityGraph, Conditions, Disruption, Mode, NodeId, ResourceId, ResourceKind,
    ResourceState, Route, Tick,
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub String);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RequestId {
    fn from(s: &str) -> Self {
        RequestId(s.to_owned())
    }
}

/// Closed constraint vocabulary a request may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Exclude air edges under an active weather slowdown.
    AvoidTurbulence,
    GroundOnly,
    RequireAir,
    /// Upper bound on door-to-door travel time in ticks (cost is time).
    MaxCost(Tick),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub request_id: RequestId,
    pub passenger: HolonId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub earliest_departure: Tick,
    #[serde(default)]
    pub constraints: BTreeSet<Constraint>,
    #[serde(default)]
    pub free_text: String,
}

impl TaskSpec {
    pub fn has(&self, c: Constraint) -> bool {
        self.constraints.contains(&c)
    }

    pub fn max_cost(&self) -> Option<Tick> {
        self.constraints.iter().find_map(|c| match c {
            Constraint::MaxCost(t) => Some(*t),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegMode {
    Scooter,
    AirTaxi,
    GroundTaxi,
    Walk,
}

/// Walking takes this many times the riding time of each ground edge.
pub const WALK_TIME_FACTOR: Tick = 2;

impl LegMode {
    pub fn edge_mode(self) -> Mode {
        match self {
            LegMode::AirTaxi => Mode::Air,
            _ => Mode::Ground,
        }
    }

    pub fn resource_kind(self) -> Option<ResourceKind> {
        match self {
            LegMode::Scooter => Some(ResourceKind::Scooter),
            LegMode::AirTaxi => Some(ResourceKind::AirTaxi),
            LegMode::GroundTaxi => Some(ResourceKind::GroundTaxi),
            LegMode::Walk => None,
        }
    }

    pub fn time_factor(self) -> Tick {
        if self == LegMode::Walk {
            WALK_TIME_FACTOR
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub leg_id: String,
    pub mode: LegMode,
    pub origin: NodeId,
    pub destination: NodeId,
    pub route: Route,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_resource: Option<ResourceId>,
    pub planned_start: Tick,
    pub planned_end: Tick,
}

impl Leg {
    pub fn duration(&self) -> Tick {
        self.planned_end - self.planned_start
    }

    pub fn is_air(&self) -> bool {
        self.mode == LegMode::AirTaxi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Draft,
    Validated,
    Approved,
    Active,
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_id: String,
    pub spec: RequestId,
    pub legs: Vec<Leg>,
    pub status: PlanStatus,
    #[serde(default)]
    pub revision: u32,
    /// Legs `[0, executed_legs)` were already carried out when this
    /// revision was made.
    #[serde(default)]
    pub executed_legs: usize,
}

impl Plan {
    pub fn has_air_leg(&self) -> bool {
        self.legs.iter().any(Leg::is_air)
    }

    pub fn arrival(&self) -> Option<Tick> {
        self.legs.last().map(|l| l.planned_end)
    }

    pub fn departure(&self) -> Option<Tick> {
        self.legs.first().map(|l| l.planned_start)
    }

    /// Door-to-door time from first departure to last arrival.
    pub fn door_to_door(&self) -> Tick {
        match (self.departure(), self.arrival()) {
            (Some(d), Some(a)) => a - d,
            _ => 0,
        }
    }

    pub fn leg(&self, id: &str) -> Option<(usize, &Leg)> {
        self.legs.iter().enumerate().find(|(_, l)| l.leg_id == id)
    }

    /// Re-times legs from `from` onward so they run back to back starting
    /// at `start`, keeping each leg's duration.
    pub fn chain_times(&mut self, from: usize, start: Tick) {
        let mut t = start;
        for leg in self.legs.iter_mut().skip(from) {
            let d = leg.duration();
            leg.planned_start = t;
            leg.planned_end = t + d;
            t = leg.planned_end;
        }
    }
}

/// Structural plan invariants. Returns one message per violation.
pub fn plan_violations(plan: &Plan, spec: &TaskSpec, graph: &CityGraph) -> Vec<String> {
    let mut out = Vec::new();
    if plan.legs.is_empty() {
        out.push("plan has no legs".into());
        return out;
    }
    if plan.legs[0].origin != spec.origin {
        out.push(format!(
            "first leg starts at {} not {}",
            plan.legs[0].origin, spec.origin
        ));
    }
    let last = plan.legs.last().expect("non-empty");
    if last.destination != spec.destination {
        out.push(format!(
            "last leg ends at {} not {}",
            last.destination, spec.destination
        ));
    }
    let mut ids = BTreeSet::new();
    for (i, leg) in plan.legs.iter().enumerate() {
        if !ids.insert(leg.leg_id.as_str()) {
            out.push(format!("duplicate leg id {}", leg.leg_id));
        }
        if let Some(next) = plan.legs.get(i + 1) {
            if leg.destination != next.origin {
                out.push(format!("{} and {} are not contiguous", leg.leg_id, next.leg_id));
            }
            if next.planned_start < leg.planned_end {
                out.push(format!("{} starts before {} ends", next.leg_id, leg.leg_id));
            }
        }
        if leg.planned_start >= leg.planned_end {
            out.push(format!("{} has empty time window", leg.leg_id));
        }
        if leg.route.origin() != Some(&leg.origin) || leg.route.destination() != Some(&leg.destination)
        {
            out.push(format!("{} route endpoints differ from leg endpoints", leg.leg_id));
        }
        if leg.route.nodes.len() != leg.route.edges.len() + 1 {
            out.push(format!("{} route node/edge count mismatch", leg.leg_id));
        }
        if leg.is_air() && !(graph.is_vertiport(&leg.origin) && graph.is_vertiport(&leg.destination))
        {
            out.push(format!("air leg {} not between vertiports", leg.leg_id));
        }
        for (k, eid) in leg.route.edges.iter().enumerate() {
            match graph.edge(eid) {
                None => out.push(format!("{} uses unknown edge {eid}", leg.leg_id)),
                Some(e) => {
                    if e.mode != leg.mode.edge_mode() {
                        out.push(format!("{} edge {eid} has wrong mode", leg.leg_id));
                    }
                    let (a, b) = (&leg.route.nodes[k], leg.route.nodes.get(k + 1));
                    if b.is_none_or(|b| e.other(a) != Some(b)) {
                        out.push(format!("{} edge {eid} does not join its route nodes", leg.leg_id));
                    }
                }
            }
        }
        if leg.mode == LegMode::Walk && leg.assigned_resource.is_some() {
            out.push(format!("walk leg {} holds a resource", leg.leg_id));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentKind {
    DelayDeparture,
    AdvanceDeparture,
    Cancel,
    Reprioritize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleAdjustment {
    pub request_id: RequestId,
    pub kind: AdjustmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<Tick>,
}

/// Time window a resource is committed to another task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub resource: ResourceId,
    pub plan_id: String,
    pub start: Tick,
    pub end: Tick,
}

/// An air departure or arrival occupying a vertiport pad for one tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadSlot {
    pub vertiport: NodeId,
    pub tick: Tick,
    pub plan_id: String,
}

/// What a reasoner may see: a snapshot of the world plus domain rules
/// and the conversation so far.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReasonerContext {
    pub tick: Tick,
    pub graph: Arc<CityGraph>,
    /// Known disruptions, active now or scheduled.
    pub disruptions: Vec<Disruption>,
    pub resources: Vec<ResourceState>,
    #[serde(default)]
    pub reservations: Vec<Reservation>,
    #[serde(default)]
    pub pad_slots: Vec<PadSlot>,
    #[serde(default)]
    pub rules: RuleSet,
    #[serde(default)]
    pub battery: BatteryModel,
    #[serde(default)]
    pub passenger_location: Option<NodeId>,
    #[serde(default)]
    pub history: Vec<String>,
}

impl ReasonerContext {
    pub fn new(graph: Arc<CityGraph>, tick: Tick) -> Self {
        ReasonerContext {
            tick,
            graph,
            disruptions: Vec::new(),
            resources: Vec::new(),
            reservations: Vec::new(),
            pad_slots: Vec::new(),
            rules: RuleSet::default(),
            battery: BatteryModel::default(),
            passenger_location: None,
            history: Vec::new(),
        }
    }

    pub fn conditions(&self) -> Conditions {
        self.conditions_at(self.tick)
    }

    pub fn conditions_at(&self, tick: Tick) -> Conditions {
        Conditions::at(&self.graph, &self.disruptions, tick)
    }

    pub fn resource(&self, id: &ResourceId) -> Option<&ResourceState> {
        self.resources.iter().find(|r| &r.id == id)
    }

    /// Hex SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("context serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
