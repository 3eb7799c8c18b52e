//! JSONL record shapes flowing between subcommands.

use serde::{Deserialize, Serialize};

use cotdag::chunk::{token_count, Chunk, RawTrace};
use cotdag::graph::ReasoningGraph;
use cotdag::{ChunkedTrace, PruneReport};

/// Output of `chunk`: the trace with its ordered chunks. The original text
/// is recoverable as the concatenation of chunk texts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub trace_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub chunks: Vec<Chunk>,
}

impl ChunkRecord {
    pub fn from_trace(trace: ChunkedTrace) -> Self {
        Self {
            trace_id: trace.trace.trace_id,
            question: trace.trace.question,
            answer: trace.trace.answer,
            correct: trace.trace.correct,
            chunks: trace.chunks,
        }
    }

    pub fn to_trace(&self) -> ChunkedTrace {
        let cot: String = self.chunks.iter().map(|c| c.text.as_str()).collect();
        ChunkedTrace {
            trace: RawTrace {
                trace_id: self.trace_id.clone(),
                question: self.question.clone(),
                cot,
                answer: self.answer.clone(),
                correct: self.correct,
            },
            chunks: self.chunks.clone(),
        }
    }
}

/// Output of `build-graph` (and input to `prune`/`relinearize`): the chunked
/// trace plus its constructed graph, and after pruning also the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub trace_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub chunks: Vec<Chunk>,
    pub graph: ReasoningGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_report: Option<PruneReport>,
}

impl GraphRecord {
    pub fn to_trace(&self) -> ChunkedTrace {
        let cot: String = self.chunks.iter().map(|c| c.text.as_str()).collect();
        ChunkedTrace {
            trace: RawTrace {
                trace_id: self.trace_id.clone(),
                question: self.question.clone(),
                cot,
                answer: self.answer.clone(),
                correct: self.correct,
            },
            chunks: self.chunks.clone(),
        }
    }
}

/// Input to `score`: one sampled trajectory with its correctness verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory_id: String,
    pub question_id: String,
    #[serde(default)]
    pub question: String,
    pub cot: String,
    #[serde(default)]
    pub answer: String,
    pub correct: bool,
}

/// Output of `score`: the trajectory with its graph measurements and
/// redundancy score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub trajectory_id: String,
    pub question_id: String,
    #[serde(default)]
    pub question: String,
    pub cot: String,
    pub length: usize,
    pub review_count: usize,
    pub node_count: usize,
    pub correct: bool,
    pub redundancy: f64,
}

impl ScoredRecord {
    pub fn to_scored_trajectory(&self) -> cotdag::ScoredTrajectory {
        cotdag::ScoredTrajectory {
            trajectory_id: self.trajectory_id.clone(),
            question_id: self.question_id.clone(),
            length: self.length,
            review_count: self.review_count,
            node_count: self.node_count,
            correct: self.correct,
            redundancy: self.redundancy,
        }
    }
}

/// One preference pair emitted by `make-dpo-pairs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoPairRecord {
    pub question_id: String,
    pub question: String,
    pub preferred_cot: String,
    pub dispreferred_cot: String,
    pub r_preferred: f64,
    pub r_dispreferred: f64,
}

/// Input to `grpo-reward`: lengths may be given directly or derived from the
/// trajectory text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoInputRecord {
    pub trajectory_id: String,
    pub question_id: String,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub cot: Option<String>,
    pub correct: bool,
}

impl GrpoInputRecord {
    pub fn resolved_length(&self) -> Option<usize> {
        self.length
            .or_else(|| self.cot.as_deref().map(token_count))
    }
}

/// Gold annotation row for `eval-labels`. `node_ref` is `<trace_id>#<node_id>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldRow {
    pub node_ref: String,
    pub gold_type: cotdag::NodeType,
    pub atomic: bool,
}

/// Free-text row for keyword frequency analysis: either a bare `text` field
/// or a trace-style `cot` field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseRecord {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub cot: Option<String>,
}

impl ResponseRecord {
    pub fn into_text(self) -> String {
        self.text.or(self.cot).unwrap_or_default()
    }
}
