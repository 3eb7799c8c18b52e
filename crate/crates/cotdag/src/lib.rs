//! Convert linear chain-of-thought traces into dependency DAGs, prune
//! redundant reflection, and re-emit compact traces plus preference and
//! reward signals for training pipelines.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`chunk`] splits a raw trace into step-level chunks at trigger tokens.
//! 2. [`construct`] asks an operation oracle — an LLM endpoint
//!    ([`backend`]) or the deterministic heuristic — to fold each chunk into
//!    a typed dependency graph ([`graph`]), one insert/merge decision at a
//!    time over a Mermaid view ([`mermaid`]).
//! 3. [`prune`] removes review nodes that open narrow side branches or sit
//!    in the late re-verification region.
//! 4. [`relinearize`](mod@relinearize) re-emits the surviving chunks as training text.
//!
//! On top of the graphs, [`score`] ranks sampled trajectories by redundancy
//! for preference pairs and computes length-penalized group rewards, and
//! [`stats`] reports corpus statistics, keyword frequencies, and label
//! metrics.
//!
//! Numeric routines are generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which is what the CLI and all JSONL
//! formats use.

pub mod backend;
pub mod chunk;
pub mod construct;
pub mod graph;
pub mod mermaid;
pub mod num;
pub mod prune;
pub mod relinearize;
pub mod score;
pub mod stats;

pub use chunk::{split_cot, token_count, Chunk, ChunkedTrace, RawTrace, TriggerSet};
pub use construct::{
    build_graph, heuristic_oracle, parse_graph_op, ConstructError, GraphOp, HeuristicOracle,
    OnExhausted, Oracle, OracleConfig,
};
pub use graph::{
    Edge, GraphError, Node, NodeId, NodeType, ReasoningGraph, Violation, TERMINAL_SUMMARY,
};
pub use num::Scalar;
pub use relinearize::{build_sft_record, relinearize, SftRecord};

/// f64-typed aliases used by the CLI and the serialized JSONL formats.
pub type PruneParams = prune::PruneParams<f64>;
pub type PruneReport = prune::PruneReport;
pub type RewardParams = score::RewardParams<f64>;
pub type RewardRecord = score::RewardRecord<f64>;
pub type ScoredTrajectory = score::ScoredTrajectory<f64>;
pub type DatasetStats = stats::DatasetStats<f64>;
pub type LabelMetrics = stats::LabelMetrics<f64>;
