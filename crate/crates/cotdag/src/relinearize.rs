//! Re-emit a (pruned) graph as linear chain-of-thought text.
//!
//! Emission uses the original chunk texts, never node summaries, in ascending
//! chunk-index order — original chronology, which is a topological extension
//! of the dependency order since edges always point forward in time. Splice
//! points are left raw; no connective text is invented.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{token_count, ChunkedTrace, TokenCounter};
use crate::graph::ReasoningGraph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelinearizeError {
    #[error("node references chunk {index} but the trace has {chunk_count} chunks")]
    DanglingChunkIndex { index: usize, chunk_count: usize },
}

/// Concatenate the original chunk texts held by the graph's surviving nodes,
/// in ascending chunk order. A synthesized terminal owns no chunks and so
/// contributes no text; with nothing pruned the result equals the original
/// chain of thought byte-for-byte.
pub fn relinearize(
    graph: &ReasoningGraph,
    trace: &ChunkedTrace,
) -> Result<String, RelinearizeError> {
    let indices: std::collections::BTreeSet<usize> = graph
        .nodes()
        .flat_map(|n| n.chunk_indices.iter().copied())
        .collect();
    let mut out = String::new();
    for index in indices {
        let chunk = trace
            .chunks
            .get(index)
            .ok_or(RelinearizeError::DanglingChunkIndex {
                index,
                chunk_count: trace.chunks.len(),
            })?;
        out.push_str(&chunk.text);
    }
    Ok(out)
}

/// One supervised fine-tuning record: the question paired with the pruned
/// trace and the untouched answer, plus token bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub trace_id: String,
    pub question: String,
    pub pruned_cot: String,
    pub answer: String,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

/// Pair the relinearized trace with its question and final answer, counting
/// tokens with the default whitespace counter.
pub fn build_sft_record(
    trace: &ChunkedTrace,
    graph: &ReasoningGraph,
) -> Result<SftRecord, RelinearizeError> {
    build_sft_record_with(trace, graph, token_count)
}

/// As [`build_sft_record`], with a caller-supplied token counter (a model
/// tokenizer, say) for the length bookkeeping.
pub fn build_sft_record_with(
    trace: &ChunkedTrace,
    graph: &ReasoningGraph,
    counter: TokenCounter,
) -> Result<SftRecord, RelinearizeError> {
    let pruned_cot = relinearize(graph, trace)?;
    Ok(SftRecord {
        trace_id: trace.trace.trace_id.clone(),
        question: trace.trace.question.clone(),
        tokens_before: counter(&trace.trace.cot),
        tokens_after: counter(&pruned_cot),
        answer: trace.trace.answer.clone(),
        pruned_cot,
    })
}
