use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CityGraph, DisruptionId, Edge, EdgeId, Mode, NodeId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisruptionKind {
    EdgeBlocked,
    VertiportClosed,
    NoFlyZone,
    WeatherSlowdown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisruptionTarget {
    Edge(EdgeId),
    Node(NodeId),
    Nodes(Vec<NodeId>),
}

impl DisruptionTarget {
    pub fn nodes(&self) -> Vec<&NodeId> {
        match self {
            DisruptionTarget::Edge(_) => Vec::new(),
            DisruptionTarget::Node(n) => vec![n],
            DisruptionTarget::Nodes(ns) => ns.iter().collect(),
        }
    }
}

/// Travel-time multiplier stored in thousandths so composition and
/// rounding stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slowdown(u32);

impl Slowdown {
    pub const NONE: Slowdown = Slowdown(1000);

    pub fn from_factor(factor: f64) -> Option<Slowdown> {
        if !factor.is_finite() || !(1.0..=1000.0).contains(&factor) {
            return None;
        }
        Some(Slowdown((factor * 1000.0).round() as u32))
    }

    pub fn permille(self) -> u32 {
        self.0
    }

    pub fn factor(self) -> f64 {
        f64::from(self.0) / 1000.0
    }
}

impl Default for Slowdown {
    fn default() -> Self {
        Slowdown::NONE
    }
}

impl Serialize for Slowdown {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.factor())
    }
}

impl<'de> Deserialize<'de> for Slowdown {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = f64::deserialize(d)?;
        Slowdown::from_factor(f)
            .ok_or_else(|| serde::de::Error::custom("slowdown_factor must be a finite number >= 1"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disruption {
    pub id: DisruptionId,
    pub kind: DisruptionKind,
    pub target: DisruptionTarget,
    pub activation: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry: Option<Tick>,
    #[serde(default, skip_serializing_if = "is_no_slowdown")]
    pub slowdown_factor: Slowdown,
}

fn is_no_slowdown(s: &Slowdown) -> bool {
    *s == Slowdown::NONE
}

impl Disruption {
    pub fn is_active_at(&self, tick: Tick) -> bool {
        self.activation <= tick && self.expiry.is_none_or(|e| tick < e)
    }

    /// Whether the disruption is active at any tick of `[start, end)`.
    pub fn overlaps(&self, start: Tick, end: Tick) -> bool {
        let end = end.max(start + 1);
        self.activation < end && self.expiry.is_none_or(|e| start < e)
    }

    /// Edge ids this disruption acts on.
    pub fn affected_edges(&self, graph: &CityGraph) -> BTreeSet<EdgeId> {
        match (&self.kind, &self.target) {
            (_, DisruptionTarget::Edge(e)) => BTreeSet::from([e.clone()]),
            (DisruptionKind::VertiportClosed | DisruptionKind::NoFlyZone, target) => target
                .nodes()
                .into_iter()
                .flat_map(|n| graph.incident(n))
                .filter(|e| e.mode == Mode::Air)
                .map(|e| e.id.clone())
                .collect(),
            (_, target) => target
                .nodes()
                .into_iter()
                .flat_map(|n| graph.incident(n))
                .map(|e| e.id.clone())
                .collect(),
        }
    }
}

/// Routing-relevant view of the disruptions active at one tick.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Conditions {
    pub tick: Tick,
    pub blocked_edges: BTreeSet<EdgeId>,
    pub closed_vertiports: BTreeSet<NodeId>,
    pub no_fly_nodes: BTreeSet<NodeId>,
    /// Per-edge slowdown multipliers, each in thousandths.
    pub slowdowns: BTreeMap<EdgeId, Vec<u32>>,
}

impl Conditions {
    pub fn at<'a>(
        graph: &CityGraph,
        disruptions: impl IntoIterator<Item = &'a Disruption>,
        tick: Tick,
    ) -> Conditions {
        let mut c = Conditions {
            tick,
            ..Conditions::default()
        };
        for edge in graph.edges().filter(|e| e.blocked) {
            c.blocked_edges.insert(edge.id.clone());
        }
        for d in disruptions.into_iter().filter(|d| d.is_active_at(tick)) {
            c.apply(graph, d);
        }
        c
    }

    fn apply(&mut self, graph: &CityGraph, d: &Disruption) {
        match d.kind {
            DisruptionKind::EdgeBlocked => {
                self.blocked_edges.extend(d.affected_edges(graph));
            }
            DisruptionKind::VertiportClosed => {
                self.closed_vertiports
                    .extend(d.target.nodes().into_iter().cloned());
            }
            DisruptionKind::NoFlyZone => {
                self.no_fly_nodes.extend(d.target.nodes().into_iter().cloned());
            }
            DisruptionKind::WeatherSlowdown => {
                for e in d.affected_edges(graph) {
                    self.slowdowns
                        .entry(e)
                        .or_default()
                        .push(d.slowdown_factor.permille());
                }
            }
        }
    }

    pub fn is_admissible(&self, edge: &Edge) -> bool {
        if self.blocked_edges.contains(&edge.id) {
            return false;
        }
        if edge.mode == Mode::Air {
            for end in [&edge.from, &edge.to] {
                if self.closed_vertiports.contains(end) || self.no_fly_nodes.contains(end) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_slowed(&self, edge: &Edge) -> bool {
        self.slowdowns
            .get(&edge.id)
            .is_some_and(|fs| fs.iter().any(|&f| f > 1000))
    }

    /// Base time times the product of active slowdowns, rounded up; `None`
    /// when the edge is inadmissible.
    pub fn travel_time(&self, edge: &Edge) -> Option<Tick> {
        if !self.is_admissible(edge) {
            return None;
        }
        let factors = match self.slowdowns.get(&edge.id) {
            None => return Some(edge.base_travel_time),
            Some(fs) => fs,
        };
        Some(scale_up(edge.base_travel_time, factors))
    }
}

fn scale_up(base: Tick, permilles: &[u32]) -> Tick {
    let mut num: u128 = u128::from(base);
    let mut den: u128 = 1;
    for &p in permilles {
        match (num.checked_mul(u128::from(p)), den.checked_mul(1000)) {
            (Some(n), Some(d)) => {
                num = n;
                den = d;
            }
            _ => {
                // Too many stacked factors for exact arithmetic.
                let f: f64 = permilles.iter().map(|&p| f64::from(p) / 1000.0).product();
                return (base as f64 * f).ceil() as Tick;
            }
        }
    }
    num.div_ceil(den) as Tick
}
