use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EdgeId, NodeId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Street,
    Vertiport,
    Poi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ground,
    Air,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub x: i64,
    #[serde(default)]
    pub y: i64,
    /// Simultaneous air movements per tick; `None` means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    /// Idle resources parked here recharge.
    #[serde(default)]
    pub charging: bool,
}

/// Undirected edge; traversable in both directions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub mode: Mode,
    #[serde(rename = "time")]
    pub base_travel_time: Tick,
    #[serde(default)]
    pub blocked: bool,
}

impl Edge {
    pub fn touches(&self, node: &NodeId) -> bool {
        &self.from == node || &self.to == node
    }

    /// The endpoint opposite `node`, if `node` is an endpoint.
    pub fn other(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.from == node {
            Some(&self.to)
        } else if &self.to == node {
            Some(&self.from)
        } else {
            None
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(EdgeId),
    #[error("edge `{edge}` references unknown node `{node}`")]
    UnknownEndpoint { edge: EdgeId, node: NodeId },
    #[error("air edge `{0}` must connect two vertiports")]
    AirEdgeOutsideVertiports(EdgeId),
    #[error("edge `{0}` has zero travel time")]
    ZeroTravelTime(EdgeId),
    #[error("edge `{0}` is a self-loop")]
    SelfLoop(EdgeId),
    #[error("edge `{edge}` duplicates `{existing}` for the same endpoints and mode")]
    ParallelEdge { edge: EdgeId, existing: EdgeId },
}

/// Typed city graph. Nodes and edges are kept in id order so every
/// traversal is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct CityGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeId, Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<EdgeId>>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for CityGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        CityGraph::new(raw.nodes, raw.edges)
    }
}

impl From<CityGraph> for RawGraph {
    fn from(g: CityGraph) -> Self {
        RawGraph {
            nodes: g.nodes.into_values().collect(),
            edges: g.edges.into_values().collect(),
        }
    }
}

impl CityGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = Node>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, GraphError> {
        let mut graph = CityGraph::default();
        for node in nodes {
            graph.add_node(node)?;
        }
        for edge in edges {
            graph.add_edge(edge)?;
        }
        Ok(graph)
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        self.adjacency.insert(node.id.clone(), BTreeSet::new());
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        if self.edges.contains_key(&edge.id) {
            return Err(GraphError::DuplicateEdge(edge.id));
        }
        for end in [&edge.from, &edge.to] {
            if !self.nodes.contains_key(end) {
                return Err(GraphError::UnknownEndpoint {
                    edge: edge.id.clone(),
                    node: end.clone(),
                });
            }
        }
        if edge.from == edge.to {
            return Err(GraphError::SelfLoop(edge.id));
        }
        if edge.base_travel_time == 0 {
            return Err(GraphError::ZeroTravelTime(edge.id));
        }
        if edge.mode == Mode::Air
            && !(self.is_vertiport(&edge.from) && self.is_vertiport(&edge.to))
        {
            return Err(GraphError::AirEdgeOutsideVertiports(edge.id));
        }
        if let Some(existing) = self.edge_between(&edge.from, &edge.to, edge.mode) {
            return Err(GraphError::ParallelEdge {
                edge: edge.id,
                existing: existing.id.clone(),
            });
        }
        for end in [&edge.from, &edge.to] {
            self.adjacency
                .get_mut(end)
                .expect("endpoint checked above")
                .insert(edge.id.clone());
        }
        self.edges.insert(edge.id.clone(), edge);
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn is_vertiport(&self, id: &NodeId) -> bool {
        self.nodes
            .get(id)
            .is_some_and(|n| n.kind == NodeKind::Vertiport)
    }

    pub fn vertiports(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Vertiport)
    }

    /// Edges incident to `node`, in edge-id order.
    pub fn incident(&self, node: &NodeId) -> impl Iterator<Item = &Edge> {
        self.adjacency
            .get(node)
            .into_iter()
            .flatten()
            .filter_map(|id| self.edges.get(id))
    }

    pub fn edge_between(&self, a: &NodeId, b: &NodeId, mode: Mode) -> Option<&Edge> {
        self.incident(a)
            .find(|e| e.mode == mode && e.other(a) == Some(b))
    }

    /// Case-insensitive node lookup used by the request parser.
    pub fn find_node_ci(&self, name: &str) -> Option<&Node> {
        self.nodes
            .values()
            .find(|n| n.id.as_str().eq_ignore_ascii_case(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, kind: NodeKind) -> Node {
        Node {
            id: id.into(),
            kind,
            x: 0,
            y: 0,
            capacity: None,
            charging: false,
        }
    }

    fn edge(id: &str, a: &str, b: &str, mode: Mode, t: Tick) -> Edge {
        Edge {
            id: id.into(),
            from: a.into(),
            to: b.into(),
            mode,
            base_travel_time: t,
            blocked: false,
        }
    }

    #[test]
    fn rejects_air_edge_between_streets() {
        let err = CityGraph::new(
            [node("A", NodeKind::Street), node("B", NodeKind::Street)],
            [edge("AB", "A", "B", Mode::Air, 3)],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::AirEdgeOutsideVertiports("AB".into()));
    }

    #[test]
    fn rejects_parallel_edges_of_same_mode_either_direction() {
        let err = CityGraph::new(
            [node("A", NodeKind::Street), node("B", NodeKind::Street)],
            [
                edge("AB", "A", "B", Mode::Ground, 3),
                edge("BA", "B", "A", Mode::Ground, 4),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::ParallelEdge { .. }));
    }

    #[test]
    fn allows_ground_and_air_between_same_vertiports() {
        let g = CityGraph::new(
            [node("V1", NodeKind::Vertiport), node("V2", NodeKind::Vertiport)],
            [
                edge("g", "V1", "V2", Mode::Ground, 9),
                edge("a", "V1", "V2", Mode::Air, 3),
            ],
        )
        .unwrap();
        assert_eq!(g.incident(&"V1".into()).count(), 2);
    }

    #[test]
    fn rejects_zero_time_and_unknown_endpoint() {
        assert_eq!(
            CityGraph::new(
                [node("A", NodeKind::Street), node("B", NodeKind::Street)],
                [edge("AB", "A", "B", Mode::Ground, 0)],
            )
            .unwrap_err(),
            GraphError::ZeroTravelTime("AB".into())
        );
        assert!(matches!(
            CityGraph::new(
                [node("A", NodeKind::Street)],
                [edge("AB", "A", "B", Mode::Ground, 1)]
            )
            .unwrap_err(),
            GraphError::UnknownEndpoint { .. }
        ));
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let json = r#"{"nodes":[{"id":"A","kind":"street"},{"id":"B","kind":"street"}],
                       "edges":[{"id":"AB","from":"A","to":"B","mode":"air","time":2}]}"#;
        assert!(serde_json::from_str::<CityGraph>(json).is_err());
    }
}
