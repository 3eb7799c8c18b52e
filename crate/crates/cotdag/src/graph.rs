//! Reasoning DAG: typed nodes, labeled dependency edges, structural queries.
//!
//! A graph holds progress/review nodes keyed by spreadsheet-style ids
//! (A..Z, AA..AZ, BA..) with edges required to point from smaller to larger
//! ids, which makes every well-formed graph acyclic by construction. Queries
//! cover the descendant set, descendant count, shortest-path depth from the
//! sources, and structural validation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved summary of the designated terminal node.
pub const TERMINAL_SUMMARY: &str = "final answer";

/// Errors from graph mutation and queries.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node id `{0}` is not valid: ids are nonempty uppercase A-Z strings")]
    InvalidNodeId(String),
    #[error("node id `{id}` does not exceed the current maximum id `{max}`")]
    IdOrderViolation { id: NodeId, max: NodeId },
    #[error("edge {from} -> {to} references an endpoint that does not fit this insertion")]
    UnknownEndpoint { from: NodeId, to: NodeId },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("node `{0}` is not reachable from any source")]
    Unreachable(NodeId),
    #[error("graph has no terminal node")]
    NoTerminal,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
}

/// Spreadsheet-style node label: A..Z, then AA..AZ, BA..BZ, and so on.
///
/// The total order is by length first, then lexicographic, so `Z < AA`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    pub fn new(s: &str) -> Result<Self, GraphError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(GraphError::InvalidNodeId(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }

    /// The first id, `A`.
    pub fn first() -> Self {
        Self("A".to_string())
    }

    /// Bijective base-26 encoding: 0 -> A, 25 -> Z, 26 -> AA, 52 -> BA.
    pub fn from_index(mut i: usize) -> Self {
        let mut buf = Vec::new();
        loop {
            buf.push(b'A' + (i % 26) as u8);
            i /= 26;
            if i == 0 {
                break;
            }
            i -= 1;
        }
        buf.reverse();
        Self(String::from_utf8(buf).expect("ASCII"))
    }

    /// Inverse of [`NodeId::from_index`].
    pub fn index(&self) -> usize {
        self.0
            .bytes()
            .fold(0usize, |acc, b| acc * 26 + (b - b'A') as usize + 1)
            - 1
    }

    /// The id immediately after this one in spreadsheet order.
    pub fn next(&self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.0)
    }
}

impl FromStr for NodeId {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for NodeId {
    type Error = GraphError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(&s)
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> Self {
        id.0
    }
}

/// Node role: does the step advance the reasoning frontier or look back at it?
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    /// Advances the active reasoning frontier, producing information that
    /// later steps rely on.
    Progress,
    /// Reads, checks, restates, deletes, or rewinds existing material
    /// without advancing the frontier.
    Review,
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeType::Progress => f.write_str("progress"),
            NodeType::Review => f.write_str("review"),
        }
    }
}

/// A reasoning unit: summary text, role label, and the trace chunks merged
/// into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub summary: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    /// Ordinals of the trace chunks this node was built from. Empty for
    /// nodes that did not come from a chunk (a synthesized terminal, or
    /// nodes parsed back from Mermaid).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub chunk_indices: BTreeSet<usize>,
}

impl Node {
    pub fn new(id: NodeId, summary: impl Into<String>, node_type: NodeType) -> Self {
        Self {
            id,
            summary: summary.into(),
            node_type,
            chunk_indices: BTreeSet::new(),
        }
    }

    pub fn with_chunk(mut self, index: usize) -> Self {
        self.chunk_indices.insert(index);
        self
    }
}

/// A labeled dependency: `to` uses products of `from`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default)]
    pub label: String,
}

impl Edge {
    pub fn new(from: NodeId, to: NodeId, label: impl Into<String>) -> Self {
        Self {
            from,
            to,
            label: label.into(),
        }
    }
}

/// One violated structural invariant, as reported by
/// [`ReasoningGraph::validate`]. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An edge does not go from a smaller id to a strictly larger one.
    EdgeDirection { from: NodeId, to: NodeId },
    /// An edge endpoint is not a node of the graph.
    DanglingEndpoint { from: NodeId, to: NodeId },
    /// The same (from, to) pair appears more than once.
    DuplicateEdge { from: NodeId, to: NodeId },
    /// No terminal node is designated.
    MissingTerminal,
    /// The designated terminal id is not a node of the graph.
    UnknownTerminal { id: NodeId },
    /// The terminal's summary is not the reserved terminal name.
    TerminalName { id: NodeId, summary: String },
    /// The terminal has outgoing edges.
    TerminalHasOutEdges { id: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EdgeDirection { from, to } => {
                write!(f, "edge {from} -> {to} does not go from a smaller id to a larger one")
            }
            Violation::DanglingEndpoint { from, to } => {
                write!(f, "edge {from} -> {to} references a missing node")
            }
            Violation::DuplicateEdge { from, to } => write!(f, "duplicate edge {from} -> {to}"),
            Violation::MissingTerminal => f.write_str("no terminal node designated"),
            Violation::UnknownTerminal { id } => write!(f, "terminal `{id}` is not in the graph"),
            Violation::TerminalName { id, summary } => {
                write!(f, "terminal `{id}` is named {summary:?}, expected {TERMINAL_SUMMARY:?}")
            }
            Violation::TerminalHasOutEdges { id } => {
                write!(f, "terminal `{id}` has outgoing edges")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal: Option<NodeId>,
}

/// The dependency DAG over reasoning nodes.
///
/// Nodes are kept in id order and edges in (from, to, label) order, so two
/// graphs built through any sequence of operations compare and serialize
/// deterministically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct ReasoningGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    terminal: Option<NodeId>,
}

impl From<ReasoningGraph> for GraphJson {
    fn from(g: ReasoningGraph) -> Self {
        GraphJson {
            nodes: g.nodes.into_values().collect(),
            edges: g.edges,
            terminal: g.terminal,
        }
    }
}

impl TryFrom<GraphJson> for ReasoningGraph {
    type Error = GraphError;
    fn try_from(j: GraphJson) -> Result<Self, Self::Error> {
        ReasoningGraph::from_parts(j.nodes, j.edges, j.terminal)
    }
}

impl ReasoningGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assemble a graph from loose parts. Duplicate node ids are rejected;
    /// all other structural problems are left for [`validate`] to report.
    ///
    /// [`validate`]: ReasoningGraph::validate
    pub fn from_parts(
        nodes: Vec<Node>,
        mut edges: Vec<Edge>,
        terminal: Option<NodeId>,
    ) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if map.insert(node.id.clone(), node.clone()).is_some() {
                return Err(GraphError::DuplicateNode(node.id));
            }
        }
        edges.sort();
        Ok(Self {
            nodes: map,
            edges,
            terminal,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Edges in (from, to, label) order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn terminal(&self) -> Option<&NodeId> {
        self.terminal.as_ref()
    }

    pub fn terminal_node(&self) -> Option<&Node> {
        self.terminal.as_ref().and_then(|t| self.nodes.get(t))
    }

    /// Largest node id, if any.
    pub fn max_id(&self) -> Option<&NodeId> {
        self.nodes.keys().next_back()
    }

    /// Count of nodes with the given type.
    pub fn count_type(&self, node_type: NodeType) -> usize {
        self.nodes
            .values()
            .filter(|n| n.node_type == node_type)
            .count()
    }

    pub fn set_terminal(&mut self, id: NodeId) -> Result<(), GraphError> {
        if !self.contains(&id) {
            return Err(GraphError::UnknownNode(id));
        }
        self.terminal = Some(id);
        Ok(())
    }

    pub fn out_degree(&self, id: &NodeId) -> usize {
        self.edges.iter().filter(|e| &e.from == id).count()
    }

    pub fn in_degree(&self, id: &NodeId) -> usize {
        self.edges.iter().filter(|e| &e.to == id).count()
    }

    /// Nodes with in-degree 0, in id order.
    pub fn sources(&self) -> Vec<NodeId> {
        let targets: BTreeSet<&NodeId> = self.edges.iter().map(|e| &e.to).collect();
        self.nodes
            .keys()
            .filter(|id| !targets.contains(id))
            .cloned()
            .collect()
    }

    /// Insert a node whose id must exceed every existing id, wiring the given
    /// incoming edges. Either the whole operation applies or the graph is
    /// left untouched.
    pub fn insert_node(&mut self, node: Node, incoming: Vec<Edge>) -> Result<(), GraphError> {
        if let Some(max) = self.max_id() {
            if node.id <= *max {
                return Err(GraphError::IdOrderViolation {
                    id: node.id,
                    max: max.clone(),
                });
            }
        }
        let mut seen: BTreeSet<(&NodeId, &NodeId)> = BTreeSet::new();
        for edge in &incoming {
            if edge.to != node.id || !self.contains(&edge.from) {
                return Err(GraphError::UnknownEndpoint {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
            if !seen.insert((&edge.from, &edge.to)) {
                return Err(GraphError::DuplicateEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
        }
        for edge in incoming {
            let at = self.edges.partition_point(|e| *e <= edge);
            self.edges.insert(at, edge);
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Replace `target`'s summary with the caller-provided updated
    /// description and record that `chunk_index` was merged into it.
    pub fn merge_into(
        &mut self,
        target: &NodeId,
        updated_summary: &str,
        chunk_index: usize,
    ) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(target)
            .ok_or_else(|| GraphError::UnknownNode(target.clone()))?;
        node.summary = updated_summary.to_string();
        node.chunk_indices.insert(chunk_index);
        Ok(())
    }

    fn adjacency(&self) -> HashMap<&NodeId, Vec<&NodeId>> {
        let mut adj: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
        for e in &self.edges {
            adj.entry(&e.from).or_default().push(&e.to);
        }
        adj
    }

    /// All nodes reachable from `v` by directed edges, `v` excluded.
    pub fn descendants(&self, v: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.contains(v) {
            return Err(GraphError::UnknownNode(v.clone()));
        }
        let adj = self.adjacency();
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &w in adj.get(u).into_iter().flatten() {
                if w != v && seen.insert(w.clone()) {
                    queue.push_back(w);
                }
            }
        }
        Ok(seen)
    }

    /// Cardinality of [`descendants`]: each reachable node counts once, no
    /// matter how many paths lead to it.
    ///
    /// [`descendants`]: ReasoningGraph::descendants
    pub fn descendant_count(&self, v: &NodeId) -> Result<usize, GraphError> {
        Ok(self.descendants(v)?.len())
    }

    /// Shortest-path depth of every reachable node, minimized over all
    /// in-degree-0 sources (sources have depth 0).
    pub fn depth_map(&self) -> HashMap<NodeId, usize> {
        let adj = self.adjacency();
        let mut dist: HashMap<NodeId, usize> = HashMap::new();
        let mut queue: VecDeque<NodeId> = VecDeque::new();
        for s in self.sources() {
            dist.insert(s.clone(), 0);
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &w in adj.get(&u).into_iter().flatten() {
                if !dist.contains_key(w) {
                    dist.insert(w.clone(), d + 1);
                    queue.push_back(w.clone());
                }
            }
        }
        dist
    }

    /// Length of a shortest path from any source to `v`.
    pub fn depth(&self, v: &NodeId) -> Result<usize, GraphError> {
        if !self.contains(v) {
            return Err(GraphError::UnknownNode(v.clone()));
        }
        self.depth_map()
            .get(v)
            .copied()
            .ok_or_else(|| GraphError::Unreachable(v.clone()))
    }

    /// Depth of the terminal node.
    pub fn max_depth(&self) -> Result<usize, GraphError> {
        let t = self.terminal.clone().ok_or(GraphError::NoTerminal)?;
        self.depth(&t)
    }

    /// Report every violated structural invariant. An empty list means the
    /// graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut seen: BTreeSet<(&NodeId, &NodeId)> = BTreeSet::new();
        for e in &self.edges {
            if e.from >= e.to {
                violations.push(Violation::EdgeDirection {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
            if !self.contains(&e.from) || !self.contains(&e.to) {
                violations.push(Violation::DanglingEndpoint {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
            if !seen.insert((&e.from, &e.to)) {
                violations.push(Violation::DuplicateEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
        }
        match &self.terminal {
            None => violations.push(Violation::MissingTerminal),
            Some(t) => match self.nodes.get(t) {
                None => violations.push(Violation::UnknownTerminal { id: t.clone() }),
                Some(node) => {
                    if node.summary != TERMINAL_SUMMARY {
                        violations.push(Violation::TerminalName {
                            id: t.clone(),
                            summary: node.summary.clone(),
                        });
                    }
                    if self.out_degree(t) > 0 {
                        violations.push(Violation::TerminalHasOutEdges { id: t.clone() });
                    }
                }
            },
        }
        violations
    }

    /// Structural equality: same nodes (id, summary, type), edges, and
    /// terminal. Chunk provenance is ignored, matching what the Mermaid view
    /// carries.
    pub fn structurally_equals(&self, other: &Self) -> bool {
        self.terminal == other.terminal
            && self.edges == other.edges
            && self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .values()
                .zip(other.nodes.values())
                .all(|(a, b)| a.id == b.id && a.summary == b.summary && a.node_type == b.node_type)
    }
}
