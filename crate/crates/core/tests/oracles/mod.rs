//! Brute-force reference implementations for routing, plan choice and
//! resource matching, plus generators for the small worlds they run on.
//! Shared by the property tests and the acceptance suite.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BTreeSet;

use holonsim_core::kernel::{
    CityGraph, Conditions, Disruption, DisruptionKind, DisruptionTarget, Edge, Location, Mode, Node, NodeId, NodeKind, ResourceKind,
    ResourceState, ResourceStatus, Tick,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// A random city with at most `max_nodes` nodes. Roughly a third of the
/// nodes are vertiports; air edges only join vertiports. `time` draws each
/// base travel time.
pub fn random_graph(
    rng: &mut impl Rng,
    max_nodes: usize,
    mut time: impl FnMut(&mut dyn rand::RngCore) -> Tick,
) -> CityGraph {
    let n = rng.random_range(2..=max_nodes);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: NodeId::new(format!("n{i}")),
            kind: if rng.random_bool(0.4) {
                NodeKind::Vertiport
            } else {
                NodeKind::Street
            },
            x: rng.random_range(0..20),
            y: rng.random_range(0..20),
            capacity: None,
            charging: false,
        })
        .collect();
    let density = rng.random_range(0.2..0.7);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&nodes[i], &nodes[j]);
            if rng.random_bool(density) {
                edges.push(edge(format!("g{i}-{j}"), a, b, Mode::Ground, time(rng)));
            }
            let ports = a.kind == NodeKind::Vertiport && b.kind == NodeKind::Vertiport;
            if ports && rng.random_bool(0.6) {
                edges.push(edge(format!("a{i}-{j}"), a, b, Mode::Air, time(rng)));
            }
        }
    }
    CityGraph::new(nodes, edges).expect("generated graph is valid")
}

fn edge(id: String, a: &Node, b: &Node, mode: Mode, t: Tick) -> Edge {
    Edge {
        id: id.into(),
        from: a.id.clone(),
        to: b.id.clone(),
        mode,
        base_travel_time: t,
        blocked: false,
    }
}

/// Random blocked edges, closed vertiports and no-fly nodes.
pub fn random_conditions(rng: &mut impl Rng, graph: &CityGraph) -> Conditions {
    let mut c = Conditions::default();
    for e in graph.edges() {
        if rng.random_bool(0.15) {
            c.blocked_edges.insert(e.id.clone());
        }
    }
    for v in graph.vertiports() {
        if rng.random_bool(0.1) {
            c.closed_vertiports.insert(v.id.clone());
        }
        if rng.random_bool(0.05) {
            c.no_fly_nodes.insert(v.id.clone());
        }
    }
    c
}

/// Open-ended disruptions, active from tick 0, that produce `c`.
pub fn disruptions_for(c: &Conditions) -> Vec<Disruption> {
    let mut out = Vec::new();
    let mut push = |kind, target| {
        out.push(Disruption {
            id: format!("d{}", out.len()).into(),
            kind,
            target,
            activation: 0,
            expiry: None,
            slowdown_factor: Default::default(),
        })
    };
    for e in &c.blocked_edges {
        push(DisruptionKind::EdgeBlocked, DisruptionTarget::Edge(e.clone()));
    }
    for v in &c.closed_vertiports {
        push(DisruptionKind::VertiportClosed, DisruptionTarget::Node(v.clone()));
    }
    if !c.no_fly_nodes.is_empty() {
        push(
            DisruptionKind::NoFlyZone,
            DisruptionTarget::Nodes(c.no_fly_nodes.iter().cloned().collect()),
        );
    }
    out
}

/// Travel time of `edge` for a vehicle moving in `mode`, `None` when the
/// edge is unusable. Written from the rules, not from the kernel.
pub fn oracle_edge_time(edge: &Edge, mode: Mode, c: &Conditions, multiplier: Tick) -> Option<Tick> {
    if edge.mode != mode || c.blocked_edges.contains(&edge.id) {
        return None;
    }
    if mode == Mode::Air {
        let shut = |n: &NodeId| c.closed_vertiports.contains(n) || c.no_fly_nodes.contains(n);
        if shut(&edge.from) || shut(&edge.to) {
            return None;
        }
    }
    Some(edge.base_travel_time * multiplier)
}

/// Minimum total time over every simple path, by depth-first enumeration.
pub fn exhaustive_shortest(
    graph: &CityGraph,
    from: &NodeId,
    to: &NodeId,
    cost: &dyn Fn(&Edge) -> Option<Tick>,
) -> Option<Tick> {
    fn dfs(
        graph: &CityGraph,
        at: &NodeId,
        to: &NodeId,
        cost: &dyn Fn(&Edge) -> Option<Tick>,
        seen: &mut BTreeSet<NodeId>,
        so_far: Tick,
        best: &mut Option<Tick>,
    ) {
        if at == to {
            *best = Some(best.map_or(so_far, |b| b.min(so_far)));
            return;
        }
        let edges: Vec<&Edge> = graph.edges().filter(|e| e.touches(at)).collect();
        for e in edges {
            let Some(t) = cost(e) else { continue };
            let next = e.other(at).expect("incident edge").clone();
            if seen.contains(&next) {
                continue;
            }
            seen.insert(next.clone());
            dfs(graph, &next, to, cost, seen, so_far + t, best);
            seen.remove(&next);
        }
    }
    let mut best = None;
    let mut seen = BTreeSet::from([from.clone()]);
    dfs(graph, from, to, cost, &mut seen, 0, &mut best);
    best
}

/// A modal combination as the oracle sees it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Combo {
    Ground,
    Air(NodeId, NodeId),
}

/// Best combination by (door-to-door time, leg count, ground first, then
/// vertiport pair ids), with every candidate scored by exhaustive search.
pub fn best_combination(
    graph: &CityGraph,
    c: &Conditions,
    origin: &NodeId,
    dest: &NodeId,
    allow_ground_only: bool,
    allow_air: bool,
) -> Option<(Tick, usize, Combo)> {
    let ground = |a: &NodeId, b: &NodeId| {
        exhaustive_shortest(graph, a, b, &|e| oracle_edge_time(e, Mode::Ground, c, 1))
    };
    let air = |a: &NodeId, b: &NodeId| {
        exhaustive_shortest(graph, a, b, &|e| oracle_edge_time(e, Mode::Air, c, 1))
    };
    let mut all = Vec::new();
    if allow_ground_only && origin != dest {
        if let Some(t) = ground(origin, dest) {
            all.push((t, 1, Combo::Ground));
        }
    }
    if allow_air {
        let ports: Vec<NodeId> = graph.vertiports().map(|n| n.id.clone()).collect();
        for v1 in &ports {
            for v2 in &ports {
                if v1 == v2 {
                    continue;
                }
                let (Some(a), Some(f), Some(e)) = (ground(origin, v1), air(v1, v2), ground(v2, dest))
                else {
                    continue;
                };
                let legs = 1 + usize::from(origin != v1) + usize::from(v2 != dest);
                all.push((a + f + e, legs, Combo::Air(v1.clone(), v2.clone())));
            }
        }
    }
    all.into_iter().min()
}

/// `count` resources of mixed kinds at random nodes, ids shuffled so id
/// order says nothing about position or battery.
pub fn random_pool(rng: &mut impl Rng, graph: &CityGraph, count: usize) -> Vec<ResourceState> {
    let nodes: Vec<NodeId> = graph.nodes().map(|n| n.id.clone()).collect();
    let ports: Vec<NodeId> = graph.vertiports().map(|n| n.id.clone()).collect();
    let mut ids: Vec<usize> = (0..count).collect();
    ids.shuffle(rng);
    ids.into_iter()
        .map(|i| {
            let kind = match rng.random_range(0..10) {
                0..=5 => ResourceKind::Scooter,
                6..=7 => ResourceKind::AirTaxi,
                _ => ResourceKind::GroundTaxi,
            };
            let at = if kind == ResourceKind::AirTaxi && !ports.is_empty() {
                ports[rng.random_range(0..ports.len())].clone()
            } else {
                nodes[rng.random_range(0..nodes.len())].clone()
            };
            // Few distinct levels so battery ties happen.
            let battery = [0u8, 10, 40, 80, 100][rng.random_range(0..5)];
            ResourceState {
                id: format!("r{i:02}").into(),
                kind,
                location: Location::Node(at),
                battery,
                status: ResourceStatus::Idle,
                assigned_task: None,
            }
        })
        .collect()
}

/// Brute-force argmax of score = -(ticks to reach `origin`) over the
/// resources of `kind` with enough battery; ties go to the higher battery,
/// then the smaller id.
pub fn brute_force_match(
    graph: &CityGraph,
    c: &Conditions,
    origin: &NodeId,
    kind: ResourceKind,
    battery_needed: u64,
    pool: &[ResourceState],
) -> Option<String> {
    let mode = if kind == ResourceKind::AirTaxi { Mode::Air } else { Mode::Ground };
    let mut best: Option<(Tick, u8, &str)> = None;
    for r in pool.iter().filter(|r| r.kind == kind) {
        if u64::from(r.battery) < battery_needed {
            continue;
        }
        let Some(at) = r.location.node() else { continue };
        let Some(reach) = exhaustive_shortest(graph, at, origin, &|e| oracle_edge_time(e, mode, c, 1))
        else {
            continue;
        };
        let better = match best {
            None => true,
            Some((t, b, id)) => {
                (Reverse(reach), r.battery, Reverse(r.id.as_str())) > (Reverse(t), b, Reverse(id))
            }
        };
        if better {
            best = Some((reach, r.battery, r.id.as_str()));
        }
    }
    best.map(|(_, _, id)| id.to_owned())
}

/// The same graph with every base travel time multiplied by `k`. Callers
/// pick `k` and base times so the product stays integral.
pub fn scale_graph(graph: &CityGraph, k: f64) -> CityGraph {
    let edges = graph.edges().map(|e| {
        let t = e.base_travel_time as f64 * k;
        assert_eq!(t.fract(), 0.0, "scaled time must stay integral");
        Edge {
            base_travel_time: t as Tick,
            ..e.clone()
        }
    });
    CityGraph::new(graph.nodes().cloned(), edges).expect("scaled graph is valid")
}
