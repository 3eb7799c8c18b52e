//! Redundant-reflection pruning.
//!
//! Two structural criteria flag low-utility review nodes:
//!
//! * branch-level: a review node with fewer than `k` descendants opens only a
//!   narrow side branch (`B(v) < k`);
//! * depth-level: a review node whose relative depth exceeds `m`
//!   (`d(v) / d_max > m`) sits in the late re-verification region.
//!
//! Both criteria are evaluated once on the input graph — no fixpoint
//! iteration. A removed node takes its exclusive descendants with it (nodes
//! reachable from the sources only through removed nodes); the terminal is
//! exempt and is re-wired with bypass edges from the surviving frontier when
//! it would otherwise be orphaned. Both inequalities are strict: with the
//! defaults `k = 2` and `m = 0.9`, a review node with exactly two descendants
//! survives, as does one at relative depth exactly 0.9.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, GraphError, Node, NodeId, NodeType, ReasoningGraph};
use crate::num::Scalar;

/// Label attached to reachability-preserving edges added during pruning.
pub const BYPASS_LABEL: &str = "pruned-bypass";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("graph has no terminal node")]
    NoTerminal,
    #[error("invalid prune parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Pruning thresholds. Defaults are `k = 2`, `m = 0.9`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneParams<F: Scalar> {
    /// Descendant threshold: review nodes with `B(v) < k` are branch-redundant.
    pub k: usize,
    /// Relative-depth threshold in `(0, 1]`: review nodes with
    /// `d(v)/d_max > m` are depth-redundant.
    pub m: F,
}

impl<F: Scalar> Default for PruneParams<F> {
    fn default() -> Self {
        Self {
            k: 2,
            m: F::from_f64(0.9).expect("0.9 is representable"),
        }
    }
}

impl<F: Scalar> PruneParams<F> {
    pub fn new(k: usize, m: F) -> Result<Self, PruneError> {
        if k < 1 {
            return Err(PruneError::InvalidParams("k must be at least 1".into()));
        }
        if !(m > F::zero() && m <= F::one()) {
            return Err(PruneError::InvalidParams(format!(
                "m must lie in (0, 1], got {m}"
            )));
        }
        Ok(Self { k, m })
    }
}

/// Audit record of one pruning pass. The criterion sets may overlap each
/// other (a node can be both branch- and depth-redundant) but never contain
/// the terminal or any surviving node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub branch_pruned: BTreeSet<NodeId>,
    pub depth_pruned: BTreeSet<NodeId>,
    /// Exclusive descendants removed alongside criterion-flagged nodes.
    pub cascade_removed: BTreeSet<NodeId>,
    pub bypass_edges_added: Vec<Edge>,
}

impl PruneReport {
    /// Union of all removed nodes.
    pub fn all_removed(&self) -> BTreeSet<NodeId> {
        self.branch_pruned
            .iter()
            .chain(&self.depth_pruned)
            .chain(&self.cascade_removed)
            .cloned()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.branch_pruned.is_empty()
            && self.depth_pruned.is_empty()
            && self.cascade_removed.is_empty()
    }
}

fn is_candidate(node: &Node, graph: &ReasoningGraph) -> bool {
    node.node_type == NodeType::Review && graph.terminal() != Some(&node.id)
}

/// Review nodes with fewer than `k` descendants. Progress nodes and the
/// terminal are never included.
pub fn find_branch_redundant(graph: &ReasoningGraph, k: usize) -> BTreeSet<NodeId> {
    graph
        .nodes()
        .filter(|n| is_candidate(n, graph))
        .filter(|n| {
            graph
                .descendant_count(&n.id)
                .expect("iterated node exists")
                < k
        })
        .map(|n| n.id.clone())
        .collect()
}

/// Review nodes whose relative depth strictly exceeds `m`. Requires a
/// terminal; a zero-depth terminal (single-node graph) yields the empty set
/// rather than dividing by zero.
pub fn find_depth_redundant<F: Scalar>(
    graph: &ReasoningGraph,
    m: F,
) -> Result<BTreeSet<NodeId>, PruneError> {
    if graph.terminal().is_none() {
        return Err(PruneError::NoTerminal);
    }
    let d_max = graph.max_depth()?;
    if d_max == 0 {
        return Ok(BTreeSet::new());
    }
    let depths = graph.depth_map();
    let d_max_f = F::from_count(d_max);
    Ok(graph
        .nodes()
        .filter(|n| is_candidate(n, graph))
        .filter(|n| {
            depths
                .get(&n.id)
                .is_some_and(|&d| F::from_count(d) / d_max_f > m)
        })
        .map(|n| n.id.clone())
        .collect())
}

/// Nodes reachable from any in-degree-0 source of the *input* graph along
/// paths that avoid `removed`.
fn reachable_avoiding(graph: &ReasoningGraph, removed: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for s in graph.sources() {
        if !removed.contains(&s) && seen.insert(s.clone()) {
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for e in graph.edges().iter().filter(|e| e.from == u) {
            if !removed.contains(&e.to) && seen.insert(e.to.clone()) {
                queue.push_back(e.to.clone());
            }
        }
    }
    seen
}

/// Surviving ancestors adjacent to the removed region feeding `orphan`:
/// walk backwards from `orphan` through removed predecessors until hitting
/// survivors.
fn surviving_frontier(
    graph: &ReasoningGraph,
    orphan: &NodeId,
    removed: &BTreeSet<NodeId>,
) -> BTreeSet<NodeId> {
    let mut frontier: BTreeSet<NodeId> = BTreeSet::new();
    let mut visited: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = VecDeque::from([orphan.clone()]);
    while let Some(u) = queue.pop_front() {
        for e in graph.edges().iter().filter(|e| e.to == u) {
            if removed.contains(&e.from) {
                if visited.insert(e.from.clone()) {
                    queue.push_back(e.from.clone());
                }
            } else {
                frontier.insert(e.from.clone());
            }
        }
    }
    frontier
}

/// Remove redundant review nodes under both criteria and return the pruned
/// graph with its audit report.
///
/// The criteria are computed once on the input graph. Each flagged node's
/// exclusive descendants are removed with it, except the terminal, which
/// always survives: if every path to a surviving node ran through removed
/// nodes, bypass edges from the surviving frontier restore reachability. The
/// output validates cleanly whenever the input does.
pub fn prune<F: Scalar>(
    graph: &ReasoningGraph,
    params: &PruneParams<F>,
) -> Result<(ReasoningGraph, PruneReport), PruneError> {
    let terminal = graph.terminal().cloned().ok_or(PruneError::NoTerminal)?;
    let branch_pruned = find_branch_redundant(graph, params.k);
    let depth_pruned = find_depth_redundant(graph, params.m)?;

    let mut primary: BTreeSet<NodeId> = branch_pruned.union(&depth_pruned).cloned().collect();
    debug_assert!(!primary.contains(&terminal));

    let reachable = reachable_avoiding(graph, &primary);
    let mut cascade_removed: BTreeSet<NodeId> = graph
        .nodes()
        .map(|n| n.id.clone())
        .filter(|id| !primary.contains(id) && !reachable.contains(id))
        .collect();
    cascade_removed.remove(&terminal);

    primary.extend(cascade_removed.iter().cloned());
    let removed = primary;

    let surviving_nodes: Vec<Node> = graph
        .nodes()
        .filter(|n| !removed.contains(&n.id))
        .cloned()
        .collect();
    let mut surviving_edges: Vec<Edge> = graph
        .edges()
        .iter()
        .filter(|e| !removed.contains(&e.from) && !removed.contains(&e.to))
        .cloned()
        .collect();

    // Re-wire survivors that lost every incoming edge.
    let mut bypass_edges_added: Vec<Edge> = Vec::new();
    for node in &surviving_nodes {
        let had_incoming = graph.in_degree(&node.id) > 0;
        let still_has_incoming = surviving_edges.iter().any(|e| e.to == node.id);
        if had_incoming && !still_has_incoming {
            for from in surviving_frontier(graph, &node.id, &removed) {
                bypass_edges_added.push(Edge::new(from, node.id.clone(), BYPASS_LABEL));
            }
        }
    }
    surviving_edges.extend(bypass_edges_added.iter().cloned());

    let pruned = ReasoningGraph::from_parts(surviving_nodes, surviving_edges, Some(terminal))?;
    let report = PruneReport {
        branch_pruned,
        depth_pruned,
        cascade_removed,
        bypass_edges_added,
    };
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TERMINAL_SUMMARY;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn node(s: &str, t: NodeType) -> Node {
        Node::new(id(s), format!("node {s}"), t)
    }

    fn terminal_node(s: &str) -> Node {
        Node::new(id(s), TERMINAL_SUMMARY, NodeType::Progress)
    }

    fn graph(nodes: Vec<Node>, edges: Vec<(&str, &str)>, terminal: &str) -> ReasoningGraph {
        let edges = edges
            .into_iter()
            .map(|(f, t)| Edge::new(id(f), id(t), ""))
            .collect();
        let g = ReasoningGraph::from_parts(nodes, edges, Some(id(terminal))).unwrap();
        assert!(g.validate().is_empty(), "test graph must be valid");
        g
    }

    /// A -> B -> C(terminal), with a review leaf R hanging off A.
    fn side_leaf_graph() -> ReasoningGraph {
        graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Progress),
                terminal_node("C"),
                node("R", NodeType::Review),
            ],
            vec![("A", "B"), ("B", "C"), ("A", "R")],
            "C",
        )
    }

    /// A -> R -> C(terminal), R review on the only path.
    fn mid_chain_review_graph() -> ReasoningGraph {
        graph(
            vec![
                node("A", NodeType::Progress),
                Node::new(id("B"), "check", NodeType::Review),
                terminal_node("C"),
            ],
            vec![("A", "B"), ("B", "C")],
            "C",
        )
    }

    #[test]
    fn branch_criterion_flags_review_leaves_only() {
        let g = side_leaf_graph();
        assert_eq!(find_branch_redundant(&g, 2), BTreeSet::from([id("R")]));
        // Progress leaf is never flagged.
        let g = graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Progress),
                terminal_node("C"),
            ],
            vec![("A", "B"), ("A", "C")],
            "C",
        );
        assert!(find_branch_redundant(&g, 2).is_empty());
    }

    #[test]
    fn branch_criterion_is_strictly_less_than() {
        // Review node B with exactly two descendants (C, D): B(v)=2 is not < 2.
        let g = graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Review),
                node("C", NodeType::Progress),
                terminal_node("D"),
            ],
            vec![("A", "B"), ("B", "C"), ("C", "D")],
            "D",
        );
        assert!(find_branch_redundant(&g, 2).is_empty());
        // One descendant fewer and it is flagged.
        assert_eq!(find_branch_redundant(&g, 3), BTreeSet::from([id("B")]));
    }

    /// Chain of `len` progress nodes ending in a terminal, with one review
    /// node spliced at depth `review_depth`.
    fn deep_chain(len: usize, review_depth: usize) -> (ReasoningGraph, NodeId) {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut review_id = None;
        for i in 0..=len {
            let nid = NodeId::from_index(i);
            let node = if i == len {
                Node::new(nid.clone(), TERMINAL_SUMMARY, NodeType::Progress)
            } else if i == review_depth {
                review_id = Some(nid.clone());
                Node::new(nid.clone(), format!("check {i}"), NodeType::Review)
            } else {
                Node::new(nid.clone(), format!("step {i}"), NodeType::Progress)
            };
            nodes.push(node);
            if i > 0 {
                edges.push(Edge::new(NodeId::from_index(i - 1), nid, ""));
            }
        }
        let terminal = NodeId::from_index(len);
        let g = ReasoningGraph::from_parts(nodes, edges, Some(terminal)).unwrap();
        assert!(g.validate().is_empty());
        (g, review_id.unwrap())
    }

    #[test]
    fn depth_criterion_is_strictly_greater_than() {
        // d_max = 20; review at d = 19 gives 0.95 > 0.9.
        let (g, review) = deep_chain(20, 19);
        let flagged = find_depth_redundant(&g, 0.9f64).unwrap();
        assert_eq!(flagged, BTreeSet::from([review]));
        // Review at d = 18 gives exactly 0.90, which is not > 0.90.
        let (g, _) = deep_chain(20, 18);
        assert!(find_depth_redundant(&g, 0.9f64).unwrap().is_empty());
        // m = 1.0 can never flag anything on a chain.
        let (g, _) = deep_chain(20, 19);
        assert!(find_depth_redundant(&g, 1.0f64).unwrap().is_empty());
    }

    #[test]
    fn depth_criterion_thresholds_in_f32_too() {
        let (g, review) = deep_chain(20, 19);
        assert_eq!(
            find_depth_redundant(&g, 0.9f32).unwrap(),
            BTreeSet::from([review])
        );
        let (g, _) = deep_chain(20, 18);
        assert!(find_depth_redundant(&g, 0.9f32).unwrap().is_empty());
    }

    #[test]
    fn depth_criterion_requires_terminal_and_handles_zero_depth() {
        let g = ReasoningGraph::from_parts(
            vec![node("A", NodeType::Review)],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(
            find_depth_redundant(&g, 0.9f64).unwrap_err(),
            PruneError::NoTerminal
        );
        // Single terminal node: d_max = 0, empty result instead of a division.
        let g = ReasoningGraph::from_parts(vec![terminal_node("A")], vec![], Some(id("A"))).unwrap();
        assert!(find_depth_redundant(&g, 0.9f64).unwrap().is_empty());
    }

    #[test]
    fn prune_leaves_progress_only_graphs_unchanged() {
        let g = graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Progress),
                terminal_node("C"),
            ],
            vec![("A", "B"), ("B", "C")],
            "C",
        );
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(pruned, g);
        assert!(report.is_empty());
    }

    #[test]
    fn prune_removes_review_side_leaf() {
        let g = side_leaf_graph();
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(report.branch_pruned, BTreeSet::from([id("R")]));
        assert!(report.cascade_removed.is_empty());
        assert!(report.bypass_edges_added.is_empty());
        assert!(!pruned.contains(&id("R")));
        assert_eq!(pruned.node_count(), 3);
        assert!(pruned.validate().is_empty());
        assert_eq!(pruned.max_depth().unwrap(), 2);
    }

    #[test]
    fn prune_bypasses_removed_mid_chain_review() {
        let g = mid_chain_review_graph();
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(report.branch_pruned, BTreeSet::from([id("B")]));
        assert_eq!(
            report.bypass_edges_added,
            vec![Edge::new(id("A"), id("C"), BYPASS_LABEL)]
        );
        assert!(pruned.contains(&id("C")));
        assert!(pruned.validate().is_empty());
        // Terminal stays reachable through the bypass.
        assert_eq!(pruned.depth(&id("C")).unwrap(), 1);
    }

    #[test]
    fn prune_cascades_exclusive_descendants() {
        // R (review) -> D (progress) both hang off A; D is reachable only
        // through R, so removing R removes D too.
        let g = graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Review),
                terminal_node("C"),
                node("D", NodeType::Progress),
            ],
            vec![("A", "B"), ("A", "C"), ("B", "D")],
            "C",
        );
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(report.branch_pruned, BTreeSet::from([id("B")]));
        assert_eq!(report.cascade_removed, BTreeSet::from([id("D")]));
        assert_eq!(pruned.node_count(), 2);
        assert!(pruned.validate().is_empty());
    }

    #[test]
    fn shared_descendants_are_not_cascaded() {
        // C is fed by both the removed review B and the surviving A, so it
        // survives with its original in-edge intact; no bypass is needed.
        let g = graph(
            vec![
                node("A", NodeType::Progress),
                node("B", NodeType::Review),
                terminal_node("C"),
            ],
            vec![("A", "B"), ("A", "C"), ("B", "C")],
            "C",
        );
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(report.all_removed(), BTreeSet::from([id("B")]));
        assert!(report.bypass_edges_added.is_empty());
        assert!(pruned.contains(&id("C")));
        assert_eq!(pruned.edges(), &[Edge::new(id("A"), id("C"), "")]);
        assert!(pruned.validate().is_empty());
    }

    #[test]
    fn terminal_is_never_removed_even_as_exclusive_descendant() {
        // Source R (review) -> terminal T: R is flagged, T would be an
        // exclusive descendant, but survives as an isolated source.
        let g = ReasoningGraph::from_parts(
            vec![
                Node::new(id("A"), "check", NodeType::Review),
                terminal_node("B"),
            ],
            vec![Edge::new(id("A"), id("B"), "")],
            Some(id("B")),
        )
        .unwrap();
        assert!(g.validate().is_empty());
        let (pruned, report) = prune(&g, &PruneParams::<f64>::default()).unwrap();
        assert_eq!(report.branch_pruned, BTreeSet::from([id("A")]));
        assert!(report.cascade_removed.is_empty());
        assert!(report.bypass_edges_added.is_empty());
        assert_eq!(pruned.node_count(), 1);
        assert!(pruned.validate().is_empty());
        // The orphaned terminal is its own source.
        assert_eq!(pruned.max_depth().unwrap(), 0);
    }

    #[test]
    fn review_typed_terminal_is_protected_from_both_criteria() {
        let g = ReasoningGraph::from_parts(
            vec![
                node("A", NodeType::Progress),
                Node::new(id("B"), TERMINAL_SUMMARY, NodeType::Review),
            ],
            vec![Edge::new(id("A"), id("B"), "")],
            Some(id("B")),
        )
        .unwrap();
        assert!(find_branch_redundant(&g, 2).is_empty());
        assert!(find_depth_redundant(&g, 0.5f64).unwrap().is_empty());
        let (pruned, report) = prune(&g, &PruneParams { k: 2, m: 0.5f64 }).unwrap();
        assert!(report.is_empty());
        assert_eq!(pruned.node_count(), 2);
    }

    #[test]
    fn prune_requires_terminal() {
        let g = ReasoningGraph::from_parts(vec![node("A", NodeType::Progress)], vec![], None)
            .unwrap();
        assert_eq!(
            prune(&g, &PruneParams::<f64>::default()).unwrap_err(),
            PruneError::NoTerminal
        );
    }

    #[test]
    fn params_are_validated() {
        assert!(PruneParams::new(0, 0.9f64).is_err());
        assert!(PruneParams::new(2, 0.0f64).is_err());
        assert!(PruneParams::new(2, 1.5f64).is_err());
        assert!(PruneParams::new(1, 1.0f64).is_ok());
    }

    #[test]
    fn monotone_in_k_and_m() {
        let g = side_leaf_graph();
        let removed_k1 = prune(&g, &PruneParams { k: 1, m: 0.9f64 })
            .unwrap()
            .1
            .all_removed();
        let removed_k2 = prune(&g, &PruneParams { k: 2, m: 0.9f64 })
            .unwrap()
            .1
            .all_removed();
        assert!(removed_k1.is_subset(&removed_k2));

        let (g, _) = deep_chain(20, 19);
        let removed_m95 = prune(&g, &PruneParams { k: 1, m: 0.95f64 })
            .unwrap()
            .1
            .all_removed();
        let removed_m90 = prune(&g, &PruneParams { k: 1, m: 0.90f64 })
            .unwrap()
            .1
            .all_removed();
        assert!(removed_m95.is_subset(&removed_m90));
    }
}
