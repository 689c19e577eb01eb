use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    CityGraph, Conditions, Disruption, DisruptionId, DisruptionKind, DisruptionTarget, EdgeId,
    NodeId, ResourceId, Tick,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Scooter,
    AirTaxi,
    GroundTaxi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceStatus {
    Idle,
    Reserved,
    InService,
    Charging,
    OutOfService,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Node(NodeId),
    OnEdge { edge: EdgeId, fraction: f64 },
}

impl Location {
    pub fn node(&self) -> Option<&NodeId> {
        match self {
            Location::Node(n) => Some(n),
            Location::OnEdge { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    pub id: ResourceId,
    pub kind: ResourceKind,
    pub location: Location,
    pub battery: u8,
    #[serde(default = "idle")]
    pub status: ResourceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_task: Option<String>,
}

fn idle() -> ResourceStatus {
    ResourceStatus::Idle
}

impl ResourceState {
    pub fn is_available(&self) -> bool {
        self.status == ResourceStatus::Idle && self.battery > 0
    }
}

/// Linear battery model: percent drained per tick in service, percent
/// restored per tick while parked at a charging node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub scooter_drain: u32,
    pub air_taxi_drain: u32,
    pub ground_taxi_drain: u32,
    pub charge_rate: u32,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel {
            scooter_drain: 1,
            air_taxi_drain: 2,
            ground_taxi_drain: 1,
            charge_rate: 5,
        }
    }
}

impl BatteryModel {
    pub fn drain_per_tick(&self, kind: ResourceKind) -> u32 {
        match kind {
            ResourceKind::Scooter => self.scooter_drain,
            ResourceKind::AirTaxi => self.air_taxi_drain,
            ResourceKind::GroundTaxi => self.ground_taxi_drain,
        }
    }

    /// Battery percentage consumed by `ticks` of service.
    pub fn required(&self, kind: ResourceKind, ticks: Tick) -> u64 {
        u64::from(self.drain_per_tick(kind)) * ticks
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("disruption id `{0}` already used")]
    DuplicateDisruption(DisruptionId),
    #[error("disruption `{id}` targets unknown or ineligible element `{target}`")]
    UnknownTarget { id: DisruptionId, target: String },
    #[error("disruption `{0}` has an invalid activation window")]
    InvalidWindow(DisruptionId),
    #[error("unknown resource `{0}`")]
    UnknownResource(ResourceId),
    #[error("duplicate resource `{0}`")]
    DuplicateResource(ResourceId),
    #[error("resource `{id}` has invalid location `{location}`")]
    InvalidLocation { id: ResourceId, location: String },
}

/// The single source of physical truth for one run.
#[derive(Clone, Debug, Serialize)]
pub struct WorldState {
    pub clock: Tick,
    pub graph: CityGraph,
    pub resources: BTreeMap<ResourceId, ResourceState>,
    /// Injected disruptions that have not yet expired, keyed by id.
    pub disruptions: BTreeMap<DisruptionId, Disruption>,
    pub rng_seed: u64,
    pub battery: BatteryModel,
    #[serde(skip)]
    used_disruption_ids: BTreeSet<DisruptionId>,
}

impl WorldState {
    pub fn new(
        graph: CityGraph,
        resources: impl IntoIterator<Item = ResourceState>,
        rng_seed: u64,
    ) -> Result<Self, KernelError> {
        let mut world = WorldState {
            clock: 0,
            graph,
            resources: BTreeMap::new(),
            disruptions: BTreeMap::new(),
            rng_seed,
            battery: BatteryModel::default(),
            used_disruption_ids: BTreeSet::new(),
        };
        for r in resources {
            world.add_resource(r)?;
        }
        Ok(world)
    }

    pub fn add_resource(&mut self, mut r: ResourceState) -> Result<(), KernelError> {
        if self.resources.contains_key(&r.id) {
            return Err(KernelError::DuplicateResource(r.id));
        }
        let valid = match &r.location {
            Location::Node(n) => self.graph.contains_node(n),
            Location::OnEdge { edge, fraction } => {
                self.graph.edge(edge).is_some() && (0.0..=1.0).contains(fraction)
            }
        };
        if !valid {
            return Err(KernelError::InvalidLocation {
                id: r.id.clone(),
                location: format!("{:?}", r.location),
            });
        }
        r.battery = r.battery.min(100);
        if r.battery == 0 && !matches!(r.status, ResourceStatus::Charging | ResourceStatus::OutOfService)
        {
            r.status = self.depleted_status(&r.location);
        }
        self.resources.insert(r.id.clone(), r);
        Ok(())
    }

    fn depleted_status(&self, loc: &Location) -> ResourceStatus {
        let charging = loc
            .node()
            .and_then(|n| self.graph.node(n))
            .is_some_and(|n| n.charging);
        if charging {
            ResourceStatus::Charging
        } else {
            ResourceStatus::OutOfService
        }
    }

    pub fn conditions(&self) -> Conditions {
        self.conditions_at(self.clock)
    }

    pub fn conditions_at(&self, tick: Tick) -> Conditions {
        Conditions::at(&self.graph, self.disruptions.values(), tick)
    }

    pub fn active_disruptions(&self) -> impl Iterator<Item = &Disruption> {
        let t = self.clock;
        self.disruptions.values().filter(move |d| d.is_active_at(t))
    }

    /// Validates and records a disruption. It takes effect at its
    /// activation tick; the caller schedules the activation event.
    pub fn inject_disruption(&mut self, d: Disruption) -> Result<(), KernelError> {
        self.check_disruption(&d)?;
        self.used_disruption_ids.insert(d.id.clone());
        self.disruptions.insert(d.id.clone(), d);
        Ok(())
    }

    /// The validation half of [`inject_disruption`](Self::inject_disruption).
    pub fn check_disruption(&self, d: &Disruption) -> Result<(), KernelError> {
        if self.used_disruption_ids.contains(&d.id) {
            return Err(KernelError::DuplicateDisruption(d.id.clone()));
        }
        if d.expiry.is_some_and(|e| e <= d.activation) {
            return Err(KernelError::InvalidWindow(d.id.clone()));
        }
        let unknown = |target: String| KernelError::UnknownTarget {
            id: d.id.clone(),
            target,
        };
        match (&d.kind, &d.target) {
            (_, DisruptionTarget::Edge(e)) => {
                if self.graph.edge(e).is_none()
                    || matches!(d.kind, DisruptionKind::VertiportClosed | DisruptionKind::NoFlyZone)
                {
                    return Err(unknown(e.to_string()));
                }
            }
            (_, DisruptionTarget::Nodes(ns)) if ns.is_empty() => {
                return Err(unknown("<empty node set>".into()));
            }
            (kind, target) => {
                for n in target.nodes() {
                    let ok = match kind {
                        DisruptionKind::VertiportClosed | DisruptionKind::NoFlyZone => {
                            self.graph.is_vertiport(n)
                        }
                        _ => self.graph.contains_node(n),
                    };
                    if !ok {
                        return Err(unknown(n.to_string()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn expire_disruption(&mut self, id: &DisruptionId) -> Option<Disruption> {
        self.disruptions.remove(id)
    }

    /// Current travel time of an edge; `None` when inadmissible or unknown.
    pub fn effective_travel_time(&self, edge: &EdgeId) -> Option<Tick> {
        let e = self.graph.edge(edge)?;
        self.conditions().travel_time(e)
    }

    /// Moves a resource to `node` after `ticks` in service. Returns the new
    /// battery level.
    pub fn complete_move(
        &mut self,
        id: &ResourceId,
        node: &NodeId,
        ticks: Tick,
    ) -> Result<u8, KernelError> {
        let model = self.battery;
        let r = self
            .resources
            .get_mut(id)
            .ok_or_else(|| KernelError::UnknownResource(id.clone()))?;
        let drain = model.required(r.kind, ticks);
        r.battery = u64::from(r.battery).saturating_sub(drain) as u8;
        r.location = Location::Node(node.clone());
        let battery = r.battery;
        if battery == 0 {
            let status = self.depleted_status(&Location::Node(node.clone()));
            let r = self.resources.get_mut(id).expect("checked");
            r.status = status;
            r.assigned_task = None;
        }
        Ok(battery)
    }

    /// One tick of charging. Returns resources whose status changed.
    pub fn charge_tick(&mut self) -> Vec<(ResourceId, ResourceStatus)> {
        let rate = self.battery.charge_rate;
        let mut changed = Vec::new();
        for r in self.resources.values_mut() {
            let at_charger = r
                .location
                .node()
                .and_then(|n| self.graph.node(n))
                .is_some_and(|n| n.charging);
            if !at_charger || !matches!(r.status, ResourceStatus::Idle | ResourceStatus::Charging)
            {
                continue;
            }
            r.battery = (u32::from(r.battery) + rate).min(100) as u8;
            if r.status == ResourceStatus::Charging && r.battery == 100 {
                r.status = ResourceStatus::Idle;
                changed.push((r.id.clone(), r.status));
            }
        }
        changed
    }

    /// Violated world invariants, as human-readable strings.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen_tasks: BTreeMap<&str, &ResourceId> = BTreeMap::new();
        for r in self.resources.values() {
            if r.status == ResourceStatus::InService && r.assigned_task.is_none() {
                out.push(format!("{} in service without a task", r.id));
            }
            if r.battery > 100 {
                out.push(format!("{} battery {} out of range", r.id, r.battery));
            }
            if r.battery == 0
                && !matches!(r.status, ResourceStatus::Charging | ResourceStatus::OutOfService)
            {
                out.push(format!("{} empty but {:?}", r.id, r.status));
            }
            let located = match &r.location {
                Location::Node(n) => self.graph.contains_node(n),
                Location::OnEdge { edge, .. } => self.graph.edge(edge).is_some(),
            };
            if !located {
                out.push(format!("{} off graph", r.id));
            }
            if let Some(task) = &r.assigned_task {
                if let Some(other) = seen_tasks.insert(task, &r.id) {
                    out.push(format!("task {task} holds both {other} and {}", r.id));
                }
            }
        }
        out
    }
}
