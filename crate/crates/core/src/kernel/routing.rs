use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CityGraph, Conditions, Edge, EdgeId, Mode, NodeId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSet {
    pub ground: bool,
    pub air: bool,
}

impl ModeSet {
    pub const GROUND: ModeSet = ModeSet {
        ground: true,
        air: false,
    };
    pub const AIR: ModeSet = ModeSet {
        ground: false,
        air: true,
    };
    pub const ALL: ModeSet = ModeSet {
        ground: true,
        air: true,
    };

    pub fn contains(self, mode: Mode) -> bool {
        match mode {
            Mode::Ground => self.ground,
            Mode::Air => self.air,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteOptions {
    pub modes: ModeSet,
    /// Exclude air edges under an active weather slowdown.
    pub avoid_slowed_air: bool,
    /// Per-edge time multiplier (walking is slower than riding).
    pub time_multiplier: Tick,
}

impl RouteOptions {
    pub fn new(modes: ModeSet) -> Self {
        RouteOptions {
            modes,
            avoid_slowed_air: false,
            time_multiplier: 1,
        }
    }

    pub fn avoiding_turbulence(mut self, yes: bool) -> Self {
        self.avoid_slowed_air = yes;
        self
    }

    pub fn with_multiplier(mut self, m: Tick) -> Self {
        self.time_multiplier = m.max(1);
        self
    }

    /// Cost of traversing `edge` under these options, `None` if excluded.
    pub fn edge_time(&self, edge: &Edge, conditions: &Conditions) -> Option<Tick> {
        if !self.modes.contains(edge.mode) {
            return None;
        }
        if self.avoid_slowed_air && edge.mode == Mode::Air && conditions.is_slowed(edge) {
            return None;
        }
        conditions
            .travel_time(edge)
            .map(|t| t * self.time_multiplier)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    /// Visited nodes, starting with the origin. Length is `edges.len() + 1`.
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub total_time: Tick,
}

impl Route {
    pub fn origin(&self) -> Option<&NodeId> {
        self.nodes.first()
    }

    pub fn destination(&self) -> Option<&NodeId> {
        self.nodes.last()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn trivial(at: NodeId) -> Self {
        Route {
            nodes: vec![at],
            edges: Vec::new(),
            total_time: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no admissible route from `{from}` to `{to}`")]
    NoRoute { from: NodeId, to: NodeId },
}

/// Minimum-time route over admissible edges (Dijkstra). Equal-cost ties
/// settle in node-id order so results are reproducible.
pub fn shortest_route(
    graph: &CityGraph,
    from: &NodeId,
    to: &NodeId,
    options: &RouteOptions,
    conditions: &Conditions,
) -> Result<Route, RoutingError> {
    for n in [from, to] {
        if !graph.contains_node(n) {
            return Err(RoutingError::UnknownNode(n.clone()));
        }
    }
    if from == to {
        return Ok(Route::trivial(from.clone()));
    }

    let mut dist: BTreeMap<&NodeId, Tick> = BTreeMap::new();
    let mut via: BTreeMap<&NodeId, &Edge> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(from, 0);
    heap.push(Reverse((0, from)));

    while let Some(Reverse((d, node))) = heap.pop() {
        if dist.get(node).is_some_and(|&best| d > best) {
            continue;
        }
        if node == to {
            break;
        }
        for edge in graph.incident(node) {
            let Some(cost) = options.edge_time(edge, conditions) else {
                continue;
            };
            let next = edge.other(node).expect("incident edge");
            let nd = d + cost;
            if dist.get(next).is_none_or(|&cur| nd < cur) {
                dist.insert(next, nd);
                via.insert(next, edge);
                heap.push(Reverse((nd, next)));
            }
        }
    }

    let Some(&total) = dist.get(to) else {
        return Err(RoutingError::NoRoute {
            from: from.clone(),
            to: to.clone(),
        });
    };
    let mut nodes = vec![to.clone()];
    let mut edges = Vec::new();
    let mut cur = to;
    while cur != from {
        let edge = via[cur];
        edges.push(edge.id.clone());
        cur = edge.other(cur).expect("predecessor edge");
        nodes.push(cur.clone());
    }
    nodes.reverse();
    edges.reverse();
    Ok(Route {
        nodes,
        edges,
        total_time: total,
    })
}
