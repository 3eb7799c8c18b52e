//! Mermaid view of a reasoning graph.
//!
//! The emitted dialect is what the construction oracle sees:
//!
//! ```text
//! graph TD
//!     A["set up the equation"]:::progress
//!     B["final answer"]:::progress
//!     A -->|uses equation| B
//! ```
//!
//! Node lines are `ID["summary"]:::progress` or `:::review`; edge lines are
//! `A -->|label| B`, or `A --> B` when the label is empty. Quotes, pipes,
//! ampersands, and newlines in summaries and labels are escaped as HTML
//! entities so the view stays line-oriented and round-trips exactly.
//!
//! Mermaid carries no chunk provenance and no explicit terminal marker;
//! parsing designates the largest out-degree-0 node whose summary is the
//! reserved terminal name, which is the identity on valid graphs.

use thiserror::Error;

use crate::graph::{Edge, Node, NodeId, NodeType, ReasoningGraph, TERMINAL_SUMMARY};

/// A line-level failure while reading the Mermaid dialect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mermaid parse error at line {line}: {message}")]
pub struct MermaidParseError {
    /// 1-based line number in the input text.
    pub line: usize,
    pub message: String,
}

fn parse_err(line: usize, message: impl Into<String>) -> MermaidParseError {
    MermaidParseError {
        line,
        message: message.into(),
    }
}

fn escape_summary(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('\n', "&#10;")
}

fn unescape_summary(s: &str) -> String {
    s.replace("&#10;", "\n")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

fn escape_label(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('|', "&#124;")
        .replace('\n', "&#10;")
}

fn unescape_label(s: &str) -> String {
    s.replace("&#10;", "\n")
        .replace("&#124;", "|")
        .replace("&amp;", "&")
}

impl ReasoningGraph {
    /// Render the graph in the Mermaid dialect above. An empty graph is just
    /// the `graph TD` header.
    pub fn to_mermaid(&self) -> String {
        let mut out = String::from("graph TD\n");
        for node in self.nodes() {
            let class = match node.node_type {
                NodeType::Progress => "progress",
                NodeType::Review => "review",
            };
            out.push_str(&format!(
                "    {}[\"{}\"]:::{}\n",
                node.id,
                escape_summary(&node.summary),
                class
            ));
        }
        for edge in self.edges() {
            if edge.label.is_empty() {
                out.push_str(&format!("    {} --> {}\n", edge.from, edge.to));
            } else {
                out.push_str(&format!(
                    "    {} -->|{}| {}\n",
                    edge.from,
                    escape_label(&edge.label),
                    edge.to
                ));
            }
        }
        out
    }

    /// Parse text in the emitted dialect back into a graph.
    pub fn from_mermaid(text: &str) -> Result<Self, MermaidParseError> {
        let mut nodes: Vec<Node> = Vec::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut saw_header = false;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != "graph TD" {
                    return Err(parse_err(line_no, format!("expected `graph TD`, found `{line}`")));
                }
                saw_header = true;
                continue;
            }
            // A line is `ID["...` for nodes or `ID -->...` for edges; the
            // character after the leading id decides, so summaries are free
            // to contain arrows and labels to contain brackets.
            let id_len = line.bytes().take_while(u8::is_ascii_uppercase).count();
            let tail = &line[id_len..];
            if id_len > 0 && tail.starts_with("[\"") {
                let node = parse_node_line(line, line_no)?;
                if nodes.iter().any(|n| n.id == node.id) {
                    return Err(parse_err(line_no, format!("duplicate node id `{}`", node.id)));
                }
                nodes.push(node);
            } else if id_len > 0 && tail.starts_with(" -->") {
                edges.push(parse_edge_line(line, line_no)?);
            } else {
                return Err(parse_err(
                    line_no,
                    format!("expected a node or edge line, found `{line}`"),
                ));
            }
        }
        if !saw_header {
            return Err(parse_err(1, "missing `graph TD` header"));
        }

        let graph = ReasoningGraph::from_parts(nodes, edges, None)
            .map_err(|e| parse_err(1, e.to_string()))?;
        Ok(designate_terminal(graph))
    }
}

fn designate_terminal(mut graph: ReasoningGraph) -> ReasoningGraph {
    let terminal = graph
        .nodes()
        .filter(|n| n.summary == TERMINAL_SUMMARY && graph.out_degree(&n.id) == 0)
        .map(|n| n.id.clone())
        .max();
    if let Some(t) = terminal {
        graph.set_terminal(t).expect("terminal candidate exists");
    }
    graph
}

fn parse_node_line(line: &str, line_no: usize) -> Result<Node, MermaidParseError> {
    let open = line
        .find("[\"")
        .ok_or_else(|| parse_err(line_no, "node line missing `[\"`"))?;
    let id = NodeId::new(&line[..open]).map_err(|e| parse_err(line_no, e.to_string()))?;
    let rest = &line[open + 2..];
    let close = rest
        .find('"')
        .ok_or_else(|| parse_err(line_no, "node line missing closing quote"))?;
    let summary = unescape_summary(&rest[..close]);
    let tail = &rest[close + 1..];
    let node_type = match tail {
        "]:::progress" => NodeType::Progress,
        "]:::review" => NodeType::Review,
        other => {
            return Err(parse_err(
                line_no,
                format!("expected `]:::progress` or `]:::review`, found `{other}`"),
            ))
        }
    };
    Ok(Node::new(id, summary, node_type))
}

fn parse_edge_line(line: &str, line_no: usize) -> Result<Edge, MermaidParseError> {
    let arrow = line.find(" -->").expect("caller checked for arrow");
    let from = NodeId::new(&line[..arrow]).map_err(|e| parse_err(line_no, e.to_string()))?;
    let rest = &line[arrow + 4..];
    let (label, to_part) = if let Some(rest) = rest.strip_prefix('|') {
        let close = rest
            .find('|')
            .ok_or_else(|| parse_err(line_no, "edge label missing closing `|`"))?;
        (unescape_label(&rest[..close]), &rest[close + 1..])
    } else {
        (String::new(), rest)
    };
    let to =
        NodeId::new(to_part.trim()).map_err(|e| parse_err(line_no, e.to_string()))?;
    Ok(Edge::new(from, to, label))
}
