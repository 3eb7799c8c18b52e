//! Iterative graph construction from chunked traces.
//!
//! For each chunk, an operation oracle (an LLM endpoint or the deterministic
//! heuristic) is shown the partial graph as Mermaid plus the chunk text and
//! must answer with one strict-JSON operation: insert a new node or merge the
//! chunk into an existing one. Responses are parsed against the wire schema,
//! checked against the merge constraints, and applied; malformed or
//! inapplicable responses are retried with the error echoed back, and an
//! exhausted retry budget falls back to a synthetic insert (or fails,
//! depending on configuration).

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::chunk::{Chunk, ChunkedTrace};
use crate::graph::{Edge, GraphError, Node, NodeId, NodeType, ReasoningGraph, TERMINAL_SUMMARY};

/// Triggers whose chunks are treated as review content when enforcing merge
/// constraints and when typing fallback inserts.
pub const REFLECTIVE_TRIGGERS: &[&str] = &[
    "Wait",
    "But wait",
    "Hold on",
    "Hmm",
    "Maybe",
    "Let me double-check",
    "Looking back",
    "Alternatively",
    "Another angle",
    "Another approach",
];

pub fn is_reflective_trigger(trigger: &str) -> bool {
    REFLECTIVE_TRIGGERS.contains(&trigger)
}

/// Instruction template rendered for the LLM oracle. `{{ graph }}` receives
/// the current graph as Mermaid and `{{ current_step }}` the chunk text.
pub const PROMPT_TEMPLATE: &str = r#"You are a chain-of-thought graph structure analysis and update module.
Given an existing graph and the current text segment current_step, you must incorporate current_step into the graph by choosing exactly one operation: Insert or Merge, and output strict JSON.

1. Inputs
- graph: an existing partial reasoning graph (Mermaid code).
- current_step: the current reasoning text segment (continuous content from the chain of thought).

2. Node Definition (Reasoning Unit)
- A node represents an abstract reasoning unit with:
  - Semantic completeness: a clear intent and its reasoning product (e.g., introducing a constraint, deriving a conclusion, setting a sub-goal, establishing a framework).
  - Abstraction: do not record low-level arithmetic or symbolic manipulation.
  - Dependability: its product can be referenced by later reasoning and creates dependencies.
- Forbidden: purely operational steps (substitution, expansion, simplification, step-by-step calculations) cannot be standalone nodes.
- Every node is labeled progress (advances the reasoning) or review (checks, restates, or rewinds existing material).

3. Independence Criteria
Treat current_step as a new reasoning unit (prefer Insert) if it satisfies any of:
- Goal introduction: introduces a new intermediate goal or subproblem.
- Product generation: yields a key conclusion, property, constraint, or equivalence used later.
- Method switch: changes the reasoning strategy or framework.
- Structural advancement: adds structure (case split, construction, invariant or lemma framework).
- Branch initiation: starts a new attempt path (even if it fails); branch from still-valid ancestors.
If it only continues the same goal with minor details or restatement and produces no new product or structure, prefer Merge.

5. Update Operations
- Merge: allowed only if current_step can be integrated into exactly one existing node while keeping it abstract and single-purpose.
  Hard constraints: review content cannot be merged into a progress node; do not merge if it causes one node to mix "advance" and "reflect" as major functions.
  Must specify target_node and updated_node_description.
- Insert: required if current_step meets independence criteria, introduces a new branch or framework, or Merge would harm abstraction or readability.
  Must create a new node and add necessary dependency edges.

6. Edge Construction Rules
- Dependency principle: if node B uses products from node A, add edge A -> B with a clear dependency label.
- Branch origin principle: new attempts must branch from still-valid ancestor products, not from negated or dead-end nodes.
- Ordering constraints:
  - Node IDs increase lexicographically: A-Z, AA-AZ, BA-BZ, ...
  - Edges must go from lexicographically smaller IDs to larger IDs.
  - The final node must be named final answer.

7. Output Format (Strict JSON)
{
  "decision": "Insert or Merge",
  "target_node": "(If Merge, the node ID to merge into; if Insert, leave empty)",
  "new_node": {
    "id": "(If Insert, a unique ID; if Merge, leave empty)",
    "description": "(If Insert, a concise description of the new node; if Merge, leave empty)",
    "type": "progress or review"
  },
  "edges": [
    {
      "from": "source node ID",
      "to": "target node ID",
      "label": "meaning of the edge"
    }
  ],
  "updated_node_description": "(If Merge, the new description; if Insert, leave empty)"
}

Your Turn:
Existing Graph: {{ graph }}
Current Step: {{ current_step }}
Your Response:"#;

/// Substitute the graph and chunk text into [`PROMPT_TEMPLATE`].
pub fn render_prompt(graph_mermaid: &str, chunk_text: &str) -> String {
    PROMPT_TEMPLATE
        .replace("{{ graph }}", graph_mermaid)
        .replace("{{ current_step }}", chunk_text)
}

/// Failures while parsing or applying oracle operations, or driving the
/// construction loop.
#[derive(Debug, Error)]
pub enum ConstructError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation in `{field}`: {message}")]
    SchemaViolation { field: String, message: String },
    #[error("inconsistent decision: {0}")]
    InconsistentDecision(String),
    #[error("review content cannot be merged into progress node `{target}`")]
    MergeConstraintViolation { target: NodeId },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("oracle unavailable at chunk {chunk_index} after {attempts} attempts: {last_error}")]
    OracleUnavailable {
        chunk_index: usize,
        attempts: u32,
        last_error: String,
    },
}

/// An oracle-side failure (endpoint unreachable, credentials missing, ...).
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct OracleError(pub String);

/// The operation oracle: given the partial graph (as Mermaid) and the current
/// chunk, propose the next operation as raw JSON text. `prior_error` carries
/// the rejection message from the previous attempt on retries.
pub trait Oracle {
    fn propose(
        &self,
        graph_mermaid: &str,
        chunk: &Chunk,
        prior_error: Option<&str>,
    ) -> Result<String, OracleError>;
}

/// One parsed insert/merge decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphOp {
    Insert {
        id: NodeId,
        description: String,
        node_type: NodeType,
        edges: Vec<Edge>,
    },
    Merge {
        target: NodeId,
        updated_description: String,
    },
}

impl GraphOp {
    /// Render the operation in the wire schema, all five keys present with
    /// empty strings for the unused slots. `parse_graph_op` inverts this.
    pub fn to_json(&self) -> String {
        let value = match self {
            GraphOp::Insert {
                id,
                description,
                node_type,
                edges,
            } => json!({
                "decision": "Insert",
                "target_node": "",
                "new_node": {
                    "id": id.as_str(),
                    "description": description,
                    "type": node_type.to_string(),
                },
                "edges": edges
                    .iter()
                    .map(|e| json!({"from": e.from.as_str(), "to": e.to.as_str(), "label": e.label}))
                    .collect::<Vec<_>>(),
                "updated_node_description": "",
            }),
            GraphOp::Merge {
                target,
                updated_description,
            } => json!({
                "decision": "Merge",
                "target_node": target.as_str(),
                "new_node": {"id": "", "description": "", "type": ""},
                "edges": [],
                "updated_node_description": updated_description,
            }),
        };
        value.to_string()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraphOp {
    decision: String,
    #[serde(default)]
    target_node: String,
    #[serde(default)]
    new_node: Option<RawNewNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    updated_node_description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNewNode {
    #[serde(default)]
    id: String,
    #[serde(default)]
    description: String,
    #[serde(default, rename = "type")]
    node_type: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: String,
    to: String,
    #[serde(default)]
    label: String,
}

/// Strip a surrounding markdown code fence, with or without a language tag.
fn strip_code_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn schema_violation(field: &str, message: impl Into<String>) -> ConstructError {
    ConstructError::SchemaViolation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_node_type(raw: &str, field: &str) -> Result<NodeType, ConstructError> {
    match raw.to_ascii_lowercase().as_str() {
        "progress" => Ok(NodeType::Progress),
        "review" => Ok(NodeType::Review),
        other => Err(schema_violation(
            field,
            format!("expected `progress` or `review`, found `{other}`"),
        )),
    }
}

fn parse_node_id(raw: &str, field: &str) -> Result<NodeId, ConstructError> {
    NodeId::new(raw).map_err(|e| schema_violation(field, e.to_string()))
}

/// Parse a raw oracle response into a [`GraphOp`].
///
/// The response must be a single JSON object in the wire schema, optionally
/// wrapped in a markdown code fence. Unknown keys are rejected; empty-string
/// optionals count as absent.
pub fn parse_graph_op(raw: &str) -> Result<GraphOp, ConstructError> {
    let stripped = strip_code_fences(raw);
    let parsed: RawGraphOp = serde_json::from_str(stripped).map_err(|e| {
        if e.classify() == serde_json::error::Category::Data {
            schema_violation("$", e.to_string())
        } else {
            ConstructError::MalformedJson(e.to_string())
        }
    })?;

    let target = (!parsed.target_node.is_empty()).then_some(parsed.target_node.as_str());
    let updated =
        (!parsed.updated_node_description.is_empty()).then_some(&parsed.updated_node_description);
    let new_node = parsed
        .new_node
        .as_ref()
        .filter(|n| !(n.id.is_empty() && n.description.is_empty()));

    let mut edges = Vec::with_capacity(parsed.edges.len());
    for (i, e) in parsed.edges.iter().enumerate() {
        edges.push(Edge::new(
            parse_node_id(&e.from, &format!("edges[{i}].from"))?,
            parse_node_id(&e.to, &format!("edges[{i}].to"))?,
            e.label.clone(),
        ));
    }

    match parsed.decision.to_ascii_lowercase().as_str() {
        "insert" => {
            if target.is_some() {
                return Err(ConstructError::InconsistentDecision(
                    "insert must leave target_node empty".to_string(),
                ));
            }
            if updated.is_some() {
                return Err(ConstructError::InconsistentDecision(
                    "insert must leave updated_node_description empty".to_string(),
                ));
            }
            let node = new_node.ok_or_else(|| {
                ConstructError::InconsistentDecision("insert requires new_node".to_string())
            })?;
            if node.description.is_empty() {
                return Err(ConstructError::InconsistentDecision(
                    "insert requires new_node.description".to_string(),
                ));
            }
            Ok(GraphOp::Insert {
                id: parse_node_id(&node.id, "new_node.id")?,
                description: node.description.clone(),
                node_type: parse_node_type(&node.node_type, "new_node.type")?,
                edges,
            })
        }
        "merge" => {
            if new_node.is_some() {
                return Err(ConstructError::InconsistentDecision(
                    "merge must leave new_node empty".to_string(),
                ));
            }
            if !edges.is_empty() {
                return Err(ConstructError::InconsistentDecision(
                    "merge must leave edges empty".to_string(),
                ));
            }
            let target = target.ok_or_else(|| {
                ConstructError::InconsistentDecision("merge requires target_node".to_string())
            })?;
            let updated = updated.ok_or_else(|| {
                ConstructError::InconsistentDecision(
                    "merge requires updated_node_description".to_string(),
                )
            })?;
            Ok(GraphOp::Merge {
                target: parse_node_id(target, "target_node")?,
                updated_description: updated.clone(),
            })
        }
        other => Err(schema_violation(
            "decision",
            format!("expected `Insert` or `Merge`, found `{other}`"),
        )),
    }
}

/// The constructor's estimate of a chunk's nature: review when its opening
/// trigger is reflective, otherwise the operation's declared type (inserts)
/// or progress (merges carry no declared type).
pub fn classify_chunk(chunk: &Chunk, op: &GraphOp) -> NodeType {
    let reflective = chunk
        .trigger
        .as_deref()
        .is_some_and(is_reflective_trigger);
    if reflective {
        return NodeType::Review;
    }
    match op {
        GraphOp::Insert { node_type, .. } => *node_type,
        GraphOp::Merge { .. } => NodeType::Progress,
    }
}

/// Apply one parsed operation for `chunk`. Inserts carry the chunk's index as
/// provenance; merges are rejected when review content targets a progress
/// node. On error the graph is left unchanged.
pub fn apply_op(
    graph: &mut ReasoningGraph,
    op: &GraphOp,
    chunk: &Chunk,
    chunk_type_hint: NodeType,
) -> Result<(), ConstructError> {
    match op {
        GraphOp::Insert {
            id,
            description,
            node_type,
            edges,
        } => {
            let node = Node::new(id.clone(), description.clone(), *node_type).with_chunk(chunk.index);
            graph.insert_node(node, edges.clone())?;
            Ok(())
        }
        GraphOp::Merge {
            target,
            updated_description,
        } => {
            let target_type = graph
                .node(target)
                .ok_or_else(|| GraphError::UnknownNode(target.clone()))?
                .node_type;
            if chunk_type_hint == NodeType::Review && target_type == NodeType::Progress {
                return Err(ConstructError::MergeConstraintViolation {
                    target: target.clone(),
                });
            }
            graph.merge_into(target, updated_description, chunk.index)?;
            Ok(())
        }
    }
}

/// What to do once a chunk has exhausted its retry budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhausted {
    /// Insert a synthetic node built from the chunk itself.
    FallbackInsert,
    /// Abort construction for this trace.
    Fail,
}

/// Retry policy for the construction loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    /// Retries per chunk after the first attempt.
    pub max_retries: u32,
    pub on_exhausted: OnExhausted,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            on_exhausted: OnExhausted::FallbackInsert,
        }
    }
}

const FALLBACK_SUMMARY_WORDS: usize = 12;

fn summary_prefix(chunk: &Chunk) -> String {
    let prefix = chunk
        .text
        .split_whitespace()
        .take(FALLBACK_SUMMARY_WORDS)
        .collect::<Vec<_>>()
        .join(" ");
    if prefix.is_empty() {
        format!("step {}", chunk.index)
    } else {
        prefix
    }
}

fn fallback_node_type(chunk: &Chunk) -> NodeType {
    if chunk.trigger.as_deref().is_some_and(is_reflective_trigger) {
        NodeType::Review
    } else {
        NodeType::Progress
    }
}

fn fallback_insert(graph: &mut ReasoningGraph, chunk: &Chunk) {
    let max = graph.max_id().cloned();
    let id = max.as_ref().map_or_else(NodeId::first, NodeId::next);
    let edges = max
        .map(|m| vec![Edge::new(m, id.clone(), "follows")])
        .unwrap_or_default();
    let node = Node::new(id, summary_prefix(chunk), fallback_node_type(chunk)).with_chunk(chunk.index);
    graph
        .insert_node(node, edges)
        .expect("fallback insert uses a fresh maximal id");
}

/// Append (or designate) the terminal "final answer" node. An existing
/// out-degree-0 node already carrying the reserved summary is designated;
/// otherwise a fresh progress node is appended, wired from the current
/// maximum id. A synthesized terminal owns no chunks, so it contributes no
/// text on relinearization.
fn ensure_terminal(graph: &mut ReasoningGraph) {
    let existing = graph
        .nodes()
        .filter(|n| n.summary == TERMINAL_SUMMARY && graph.out_degree(&n.id) == 0)
        .map(|n| n.id.clone())
        .max();
    if let Some(t) = existing {
        graph.set_terminal(t).expect("candidate exists");
        return;
    }
    let max = graph.max_id().cloned();
    let id = max.as_ref().map_or_else(NodeId::first, NodeId::next);
    let edges = max
        .map(|m| vec![Edge::new(m, id.clone(), "concludes")])
        .unwrap_or_default();
    graph
        .insert_node(Node::new(id.clone(), TERMINAL_SUMMARY, NodeType::Progress), edges)
        .expect("terminal insert uses a fresh maximal id");
    graph.set_terminal(id).expect("just inserted");
}

/// Drive the construction loop over a chunked trace: query the oracle per
/// chunk, parse and apply its operation, retry with the error echoed back on
/// failure, fall back or fail once the budget is spent, and guarantee a
/// terminal node at the end. The result always passes
/// [`ReasoningGraph::validate`] with no violations.
pub fn build_graph(
    trace: &ChunkedTrace,
    oracle: &dyn Oracle,
    config: &OracleConfig,
) -> Result<ReasoningGraph, ConstructError> {
    let mut graph = ReasoningGraph::new();
    for chunk in &trace.chunks {
        let mut last_error: Option<String> = None;
        let mut applied = false;
        for _ in 0..=config.max_retries {
            let mermaid = graph.to_mermaid();
            let raw = match oracle.propose(&mermaid, chunk, last_error.as_deref()) {
                Ok(raw) => raw,
                Err(e) => {
                    last_error = Some(e.to_string());
                    continue;
                }
            };
            let outcome = parse_graph_op(&raw).and_then(|op| {
                let hint = classify_chunk(chunk, &op);
                apply_op(&mut graph, &op, chunk, hint)
            });
            match outcome {
                Ok(()) => {
                    applied = true;
                    break;
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }
        if !applied {
            match config.on_exhausted {
                OnExhausted::FallbackInsert => fallback_insert(&mut graph, chunk),
                OnExhausted::Fail => {
                    return Err(ConstructError::OracleUnavailable {
                        chunk_index: chunk.index,
                        attempts: config.max_retries + 1,
                        last_error: last_error.unwrap_or_default(),
                    })
                }
            }
        }
    }
    ensure_terminal(&mut graph);
    debug_assert!(graph.validate().is_empty(), "constructed graph must validate");
    Ok(graph)
}

/// Deterministic offline oracle: always inserts, typing the node review when
/// the chunk's trigger is reflective, summarizing with the chunk's first
/// twelve words, and depending on the current maximum-id node.
pub fn heuristic_oracle(graph_mermaid: &str, chunk: &Chunk) -> String {
    let graph = ReasoningGraph::from_mermaid(graph_mermaid).unwrap_or_default();
    let max = graph.max_id().cloned();
    let id = max.as_ref().map_or_else(NodeId::first, NodeId::next);
    let edges = max
        .map(|m| {
            vec![json!({
                "from": m.as_str(),
                "to": id.as_str(),
                "label": "follows",
            })]
        })
        .unwrap_or_default();
    json!({
        "decision": "Insert",
        "target_node": "",
        "new_node": {
            "id": id.as_str(),
            "description": summary_prefix(chunk),
            "type": fallback_node_type(chunk).to_string(),
        },
        "edges": edges,
        "updated_node_description": "",
    })
    .to_string()
}

/// [`Oracle`] wrapper over [`heuristic_oracle`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicOracle;

impl Oracle for HeuristicOracle {
    fn propose(
        &self,
        graph_mermaid: &str,
        chunk: &Chunk,
        _prior_error: Option<&str>,
    ) -> Result<String, OracleError> {
        Ok(heuristic_oracle(graph_mermaid, chunk))
    }
}
