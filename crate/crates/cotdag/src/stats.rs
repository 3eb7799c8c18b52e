//! Dataset statistics, reflection-keyword frequencies, and node-label
//! evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::token_count;
use crate::graph::{NodeType, ReasoningGraph};
use crate::num::Scalar;

/// Reflection- and progress-oriented tokens tracked in frequency reports.
pub const DEFAULT_KEYWORDS: &[&str] = &["wait", "but", "hmm", "maybe", "check", "therefore"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// One corpus sample: the constructed graph and its pruned counterpart with
/// both text variants.
#[derive(Debug, Clone, Copy)]
pub struct SamplePair<'a> {
    pub full: &'a ReasoningGraph,
    pub pruned: &'a ReasoningGraph,
    pub full_cot: &'a str,
    pub pruned_cot: &'a str,
}

/// Corpus-level averages before and after pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats<F: Scalar> {
    pub total_samples: usize,
    pub avg_nodes_full: F,
    pub avg_nodes_pruned: F,
    pub avg_review_full: F,
    pub avg_review_pruned: F,
    pub avg_tokens_full: F,
    pub avg_tokens_pruned: F,
    /// Fraction of review nodes removed, over aggregate totals. Zero when
    /// the corpus has no review nodes.
    pub review_removed_fraction: F,
}

pub fn dataset_stats<F: Scalar>(pairs: &[SamplePair<'_>]) -> Result<DatasetStats<F>, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    let n = F::from_count(pairs.len());
    let mut nodes_full = 0usize;
    let mut nodes_pruned = 0usize;
    let mut review_full = 0usize;
    let mut review_pruned = 0usize;
    let mut tokens_full = 0usize;
    let mut tokens_pruned = 0usize;
    for p in pairs {
        nodes_full += p.full.node_count();
        nodes_pruned += p.pruned.node_count();
        review_full += p.full.count_type(NodeType::Review);
        review_pruned += p.pruned.count_type(NodeType::Review);
        tokens_full += token_count(p.full_cot);
        tokens_pruned += token_count(p.pruned_cot);
    }
    let review_removed_fraction = if review_full == 0 {
        F::zero()
    } else {
        F::from_count(review_full - review_pruned.min(review_full)) / F::from_count(review_full)
    };
    Ok(DatasetStats {
        total_samples: pairs.len(),
        avg_nodes_full: F::from_count(nodes_full) / n,
        avg_nodes_pruned: F::from_count(nodes_pruned) / n,
        avg_review_full: F::from_count(review_full) / n,
        avg_review_pruned: F::from_count(review_pruned) / n,
        avg_tokens_full: F::from_count(tokens_full) / n,
        avg_tokens_pruned: F::from_count(tokens_pruned) / n,
        review_removed_fraction,
    })
}

/// Case-insensitive whole-word occurrences of `keyword` in `text`. Keywords
/// are matched ASCII-case-insensitively; both ends of a match must sit on a
/// word boundary, so "therefore" does not fire inside "thereforeX".
pub fn count_keyword(text: &str, keyword: &str) -> usize {
    if keyword.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut prev: Option<char> = None;
    let mut pos = 0;
    while pos < text.len() {
        let at_word_start = prev.is_none_or(|p| !p.is_alphanumeric());
        let end = pos + keyword.len();
        if at_word_start && end <= text.len() && text.is_char_boundary(end) {
            let candidate = &text[pos..end];
            let ends_clean = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            if ends_clean && candidate.eq_ignore_ascii_case(keyword) {
                count += 1;
                prev = candidate.chars().last();
                pos = end;
                continue;
            }
        }
        let ch = text[pos..].chars().next().expect("pos < len");
        prev = Some(ch);
        pos += ch.len_utf8();
    }
    count
}

/// Mean occurrences of each keyword per response, in keyword order. An empty
/// response list yields zero means.
pub fn keyword_frequencies<F: Scalar, S: AsRef<str>>(
    responses: &[S],
    keywords: &[String],
) -> Vec<(String, F)> {
    keywords
        .iter()
        .map(|kw| {
            let total: usize = responses.iter().map(|r| count_keyword(r.as_ref(), kw)).sum();
            let mean = if responses.is_empty() {
                F::zero()
            } else {
                F::from_count(total) / F::from_count(responses.len())
            };
            (kw.clone(), mean)
        })
        .collect()
}

/// Precision/recall/F1 for one class. When a denominator is zero the metric
/// is reported as 0 and flagged undefined rather than erroring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<F: Scalar> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Per-class metrics plus atomicity and overall node validity rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics<F: Scalar> {
    pub progress: ClassMetrics<F>,
    pub review: ClassMetrics<F>,
    /// Fraction of nodes flagged atomic.
    pub atomicity_rate: F,
    /// Fraction of nodes that are both type-correct and atomic.
    pub valid_rate: F,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score<F: Scalar>(precision: F, recall: F) -> F {
    let sum = precision + recall;
    if sum <= F::zero() {
        F::zero()
    } else {
        let two = F::one() + F::one();
        two * precision * recall / sum
    }
}

fn class_metrics<F: Scalar>(
    predicted: &[NodeType],
    gold: &[NodeType],
    class: NodeType,
) -> ClassMetrics<F> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p == class, g == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision_defined = tp + fp > 0;
    let recall_defined = tp + fn_ > 0;
    let precision = if precision_defined {
        F::from_count(tp) / F::from_count(tp + fp)
    } else {
        F::zero()
    };
    let recall = if recall_defined {
        F::from_count(tp) / F::from_count(tp + fn_)
    } else {
        F::zero()
    };
    ClassMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        precision_defined,
        recall_defined,
    }
}

/// Standard per-class precision/recall/F1 over predicted vs gold node types,
/// plus atomicity and validity rates from the parallel atomicity list.
pub fn label_metrics<F: Scalar>(
    predicted: &[NodeType],
    gold: &[NodeType],
    atomic: &[bool],
) -> Result<LabelMetrics<F>, StatsError> {
    if predicted.len() != gold.len() || predicted.len() != atomic.len() {
        return Err(StatsError::LengthMismatch(format!(
            "predicted {}, gold {}, atomic {}",
            predicted.len(),
            gold.len(),
            atomic.len()
        )));
    }
    if predicted.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    let n = F::from_count(predicted.len());
    let atomic_count = atomic.iter().filter(|&&a| a).count();
    let valid_count = predicted
        .iter()
        .zip(gold)
        .zip(atomic)
        .filter(|((p, g), &a)| p == g && a)
        .count();
    Ok(LabelMetrics {
        progress: class_metrics(predicted, gold, NodeType::Progress),
        review: class_metrics(predicted, gold, NodeType::Review),
        atomicity_rate: F::from_count(atomic_count) / n,
        valid_rate: F::from_count(valid_count) / n,
    })
}
