//! Trace data model and trigger-token chunking.
//!
//! A raw reasoning trace is split into ordered step-level chunks at trigger
//! tokens ("Wait", "Therefore", ...). Splitting is lossless: the chunk texts
//! concatenate back to the original trace byte-for-byte.

use serde::{Deserialize, Serialize};

/// Default split tokens that open a new reasoning step.
///
/// Matching is case-sensitive exactly as listed (sentence-initial
/// capitalization), at word boundaries on both sides, longest match first, so
/// "Let me double-check" wins over "Let me" and "Compute" does not fire
/// inside "Computer".
pub const DEFAULT_TRIGGERS: &[&str] = &[
    "Wait",
    "Alternatively",
    "Another angle",
    "Another approach",
    "But wait",
    "Hold on",
    "Hmm",
    "Maybe",
    "Looking back",
    "Okay",
    "Let me",
    "First",
    "Then",
    "Alright",
    "Compute",
    "Correct",
    "Good",
    "Got it",
    "I don't see any errors",
    "I think",
    "Let me double-check",
    "Let's see",
    "Now",
    "Remember",
    "Seems solid",
    "Similarly",
    "So",
    "Starting",
    "That's correct",
    "That seems right",
    "Therefore",
    "Thus",
];

/// A problem with its reasoning text, final answer, and externally supplied
/// correctness verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrace {
    pub trace_id: String,
    pub question: String,
    /// The chain-of-thought text. May be empty.
    pub cot: String,
    pub answer: String,
    /// Correctness verdict, when a verifier has produced one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// One step-level segment of a chain of thought.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// 0-based position within the trace.
    pub index: usize,
    /// Exact substring of the original text, whitespace included.
    pub text: String,
    /// The trigger token that opened this chunk. `None` only for leading
    /// text before the first trigger (or a trigger-free trace).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
}

/// A trace together with its ordered chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkedTrace {
    pub trace: RawTrace,
    pub chunks: Vec<Chunk>,
}

impl ChunkedTrace {
    /// Chunk a raw trace with the given trigger set.
    pub fn new(trace: RawTrace, triggers: &TriggerSet) -> Self {
        let chunks = split_cot(&trace.cot, triggers);
        Self { trace, chunks }
    }

    /// Concatenation of all chunk texts. Equals `trace.cot` by construction.
    pub fn rejoined(&self) -> String {
        self.chunks.iter().map(|c| c.text.as_str()).collect()
    }
}

/// An ordered set of trigger tokens, matched longest-first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerSet {
    // Sorted by descending byte length (then lexicographically) so that
    // multi-word triggers take precedence over their prefixes.
    ordered: Vec<String>,
}

impl Default for TriggerSet {
    fn default() -> Self {
        Self::new(DEFAULT_TRIGGERS.iter().map(|s| s.to_string()))
    }
}

impl TriggerSet {
    /// Build a set from arbitrary trigger strings. Empty entries are dropped
    /// and duplicates collapsed.
    pub fn new(triggers: impl IntoIterator<Item = String>) -> Self {
        let mut ordered: Vec<String> = triggers.into_iter().filter(|t| !t.is_empty()).collect();
        ordered.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        ordered.dedup();
        Self { ordered }
    }

    /// Parse a plain-text trigger list, one trigger per line. Blank lines are
    /// ignored; a trailing `\r` is stripped so CRLF files work.
    pub fn from_lines(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ordered.iter().map(|s| s.as_str())
    }

    /// Longest trigger matching at byte position `pos`, which the caller has
    /// already verified to be the start of a word. The match must also end at
    /// a word boundary.
    fn match_at(&self, text: &str, pos: usize) -> Option<&str> {
        let rest = &text[pos..];
        for t in &self.ordered {
            if rest.starts_with(t.as_str()) {
                let ends_clean = rest[t.len()..]
                    .chars()
                    .next()
                    .is_none_or(|c| !c.is_alphanumeric());
                if ends_clean {
                    return Some(t);
                }
            }
        }
        None
    }
}

/// Split a chain of thought into chunks at trigger-token boundaries.
///
/// A boundary is placed immediately before each trigger occurrence that
/// starts and ends at a word boundary, scanning left to right; the scan
/// resumes after a matched trigger so one boundary never opens inside
/// another. Text before the first trigger forms chunk 0. The partition is
/// lossless; an empty input yields a single empty chunk.
pub fn split_cot(cot: &str, triggers: &TriggerSet) -> Vec<Chunk> {
    if cot.is_empty() {
        return vec![Chunk {
            index: 0,
            text: String::new(),
            trigger: None,
        }];
    }

    let mut boundaries: Vec<(usize, &str)> = Vec::new();
    let mut prev: Option<char> = None;
    let mut pos = 0;
    while pos < cot.len() {
        let at_word_start = prev.is_none_or(|p| !p.is_alphanumeric());
        if at_word_start {
            if let Some(t) = triggers.match_at(cot, pos) {
                boundaries.push((pos, t));
                let end = pos + t.len();
                prev = cot[pos..end].chars().last();
                pos = end;
                continue;
            }
        }
        let ch = cot[pos..].chars().next().expect("pos < len");
        prev = Some(ch);
        pos += ch.len_utf8();
    }

    let mut starts: Vec<(usize, Option<String>)> = Vec::new();
    if boundaries.first().is_none_or(|&(p, _)| p > 0) {
        starts.push((0, None));
    }
    starts.extend(boundaries.into_iter().map(|(p, t)| (p, Some(t.to_string()))));

    starts
        .iter()
        .enumerate()
        .map(|(i, (start, trigger))| {
            let end = starts.get(i + 1).map_or(cot.len(), |&(e, _)| e);
            Chunk {
                index: i,
                text: cot[*start..end].to_string(),
                trigger: trigger.clone(),
            }
        })
        .collect()
}

/// Count whitespace-delimited words. This is the default length measure for
/// all token math; swap in a model tokenizer via [`TokenCounter`] where a
/// caller needs subword fidelity.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Pluggable token counting function.
pub type TokenCounter = fn(&str) -> usize;
