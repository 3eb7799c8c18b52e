//! Subcommand implementations over JSONL files.
//!
//! Every command reads one JSON object per line, processes records with
//! bounded parallelism while preserving input order, and writes one JSON
//! object per line to `--out`. A record-level failure aborts with a nonzero
//! exit unless `--skip-errors` is set, in which case failures are logged to
//! `<out>.errors` and the record is dropped.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use cotdag::backend::{BackendConfig, ChatClient, ChatOracle};
use cotdag::chunk::{token_count, RawTrace, TriggerSet};
use cotdag::construct::{build_graph, HeuristicOracle, Oracle, OracleConfig};
use cotdag::graph::ReasoningGraph;
use cotdag::prune::prune;
use cotdag::relinearize::build_sft_record;
use cotdag::score::{build_dpo_pairs, grpo_rewards, mean_length, redundancy_score};
use cotdag::stats::{dataset_stats, keyword_frequencies, label_metrics, SamplePair, DEFAULT_KEYWORDS};
use cotdag::{ChunkedTrace, NodeType, PruneParams, RewardParams, SftRecord};

use crate::config::{BackendKind, FileConfig};
use crate::records::{
    ChunkRecord, DpoPairRecord, GoldRow, GraphRecord, GrpoInputRecord, ResponseRecord,
    ScoredRecord, TrajectoryRecord,
};

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct RecordFailure {
    line: usize,
    error: String,
}

type Loaded<In> = (Vec<(usize, In)>, Vec<RecordFailure>);

/// The configured oracle plus, for the LLM backend, a client handle for
/// ledger reporting.
pub type OracleHandle = (Box<dyn Oracle + Send + Sync>, Option<Arc<ChatClient>>);

pub struct Runner {
    pub jobs: usize,
    pub skip_errors: bool,
}

impl Runner {
    fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .context("building worker pool")
    }

    /// Parse every line of `input` as `In`, map records in parallel, and
    /// write the outputs in input order.
    fn map_jsonl<In, Out>(
        &self,
        input: &Path,
        out: &Path,
        f: impl Fn(In) -> anyhow::Result<Out> + Sync,
    ) -> anyhow::Result<()>
    where
        In: DeserializeOwned + Send,
        Out: Serialize + Send,
    {
        let lines = read_lines(input)?;
        let pool = self.pool()?;
        let results: Vec<(usize, anyhow::Result<Out>)> = pool.install(|| {
            lines
                .par_iter()
                .map(|(line_no, text)| {
                    let outcome = serde_json::from_str::<In>(text)
                        .map_err(anyhow::Error::from)
                        .and_then(&f);
                    (*line_no, outcome)
                })
                .collect()
        });

        let mut records = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (line, outcome) in results {
            match outcome {
                Ok(record) => records.push(record),
                Err(e) => failures.push(RecordFailure {
                    line,
                    error: format!("{e:#}"),
                }),
            }
        }
        self.finish(out, &records, failures)
    }

    /// Apply the skip policy and write outputs plus the failure sidecar.
    fn finish<Out: Serialize>(
        &self,
        out: &Path,
        records: &[Out],
        failures: Vec<RecordFailure>,
    ) -> anyhow::Result<()> {
        if !failures.is_empty() && !self.skip_errors {
            let first = &failures[0];
            bail!(
                "record at line {} failed: {} ({} failure(s) total; rerun with --skip-errors to continue past failures)",
                first.line,
                first.error,
                failures.len()
            );
        }
        write_jsonl(out, records)?;
        if !failures.is_empty() {
            let sidecar = sidecar_path(out);
            write_jsonl(&sidecar, &failures)?;
            eprintln!(
                "skipped {} failing record(s); details in {}",
                failures.len(),
                sidecar.display()
            );
        }
        Ok(())
    }

    /// Load and parse a whole JSONL file, applying the skip policy to parse
    /// failures. Returns surviving records with their line numbers.
    fn load_all<In: DeserializeOwned>(
        &self,
        input: &Path,
    ) -> anyhow::Result<Loaded<In>> {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (line_no, text) in read_lines(input)? {
            match serde_json::from_str::<In>(&text) {
                Ok(r) => records.push((line_no, r)),
                Err(e) => failures.push(RecordFailure {
                    line: line_no,
                    error: e.to_string(),
                }),
            }
        }
        if !failures.is_empty() && !self.skip_errors {
            let first = &failures[0];
            bail!("record at line {} failed: {}", first.line, first.error);
        }
        Ok((records, failures))
    }
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading input {}", path.display()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating output directory {}", parent.display()))?;
    }
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating output {}", path.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".errors");
    PathBuf::from(s)
}

pub fn resolve_triggers(flag: Option<&str>, config: &FileConfig) -> anyhow::Result<TriggerSet> {
    let path = match flag {
        Some("default") => return Ok(TriggerSet::default()),
        Some(path) => Some(PathBuf::from(path)),
        None => config.triggers.clone(),
    };
    match path {
        None => Ok(TriggerSet::default()),
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading trigger list {}", path.display()))?;
            let set = TriggerSet::from_lines(&text);
            if set.is_empty() {
                bail!("trigger list {} is empty", path.display());
            }
            Ok(set)
        }
    }
}

/// Instantiate the configured oracle. The client handle is returned for
/// ledger reporting when the LLM backend is selected.
pub fn make_oracle(
    kind: BackendKind,
    backend_config: BackendConfig,
    cache: Option<&Path>,
) -> anyhow::Result<OracleHandle> {
    match kind {
        BackendKind::Heuristic => Ok((Box::new(HeuristicOracle), None)),
        BackendKind::Llm => {
            let client = match cache {
                Some(path) => ChatClient::with_cache(backend_config, path)?,
                None => ChatClient::new(backend_config),
            };
            let client = Arc::new(client);
            Ok((Box::new(ChatOracle::new(Arc::clone(&client))), Some(client)))
        }
    }
}

pub fn report_ledger(client: &ChatClient) {
    let ledger = client.ledger();
    let qualifier = if ledger.contains_estimates {
        " (estimated)"
    } else {
        ""
    };
    eprintln!(
        "backend usage: {} requests, {} input tokens, {} output tokens, cost {:.4}{}",
        ledger.requests, ledger.input_tokens, ledger.output_tokens, ledger.estimated_cost, qualifier
    );
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn chunk(runner: &Runner, input: &Path, out: &Path, triggers: &TriggerSet) -> anyhow::Result<()> {
    runner.map_jsonl(input, out, |trace: RawTrace| {
        Ok(ChunkRecord::from_trace(ChunkedTrace::new(trace, triggers)))
    })
}

pub fn build_graph_cmd(
    runner: &Runner,
    input: &Path,
    out: &Path,
    oracle: &(dyn Oracle + Send + Sync),
    oracle_config: &OracleConfig,
) -> anyhow::Result<()> {
    runner.map_jsonl(input, out, |record: ChunkRecord| {
        let trace = record.to_trace();
        let graph = build_graph(&trace, oracle, oracle_config)?;
        Ok(GraphRecord {
            trace_id: record.trace_id,
            question: record.question,
            answer: record.answer,
            correct: record.correct,
            chunks: record.chunks,
            graph,
            prune_report: None,
        })
    })
}

pub fn prune_cmd(
    runner: &Runner,
    input: &Path,
    out: &Path,
    params: &PruneParams,
) -> anyhow::Result<()> {
    runner.map_jsonl(input, out, |record: GraphRecord| {
        let (pruned, report) = prune(&record.graph, params)?;
        Ok(GraphRecord {
            graph: pruned,
            prune_report: Some(report),
            ..record
        })
    })
}

pub fn relinearize_cmd(runner: &Runner, input: &Path, out: &Path) -> anyhow::Result<()> {
    runner.map_jsonl(input, out, |record: GraphRecord| {
        let trace = record.to_trace();
        Ok(build_sft_record(&trace, &record.graph)?)
    })
}

pub fn make_sft(
    runner: &Runner,
    input: &Path,
    out: &Path,
    triggers: &TriggerSet,
    oracle: &(dyn Oracle + Send + Sync),
    oracle_config: &OracleConfig,
    params: &PruneParams,
) -> anyhow::Result<()> {
    runner.map_jsonl(input, out, |trace: RawTrace| {
        let trace = ChunkedTrace::new(trace, triggers);
        let graph = build_graph(&trace, oracle, oracle_config)?;
        let (pruned, _report) = prune(&graph, params)?;
        Ok::<SftRecord, anyhow::Error>(build_sft_record(&trace, &pruned)?)
    })
}

pub fn score_cmd(
    runner: &Runner,
    input: &Path,
    out: &Path,
    triggers: &TriggerSet,
    oracle: &(dyn Oracle + Send + Sync),
    oracle_config: &OracleConfig,
) -> anyhow::Result<()> {
    let lines = read_lines(input)?;
    let pool = runner.pool()?;

    struct Measured {
        record: TrajectoryRecord,
        length: usize,
        review_count: usize,
        node_count: usize,
    }

    let results: Vec<(usize, anyhow::Result<Measured>)> = pool.install(|| {
        lines
            .par_iter()
            .map(|(line_no, text)| {
                let outcome = serde_json::from_str::<TrajectoryRecord>(text)
                    .map_err(anyhow::Error::from)
                    .and_then(|record| {
                        let trace = ChunkedTrace::new(
                            RawTrace {
                                trace_id: record.trajectory_id.clone(),
                                question: record.question.clone(),
                                cot: record.cot.clone(),
                                answer: record.answer.clone(),
                                correct: Some(record.correct),
                            },
                            triggers,
                        );
                        let graph = build_graph(&trace, oracle, oracle_config)?;
                        Ok(Measured {
                            length: token_count(&record.cot),
                            review_count: graph.count_type(NodeType::Review),
                            node_count: graph.node_count(),
                            record,
                        })
                    });
                (*line_no, outcome)
            })
            .collect()
    });

    let mut measured = Vec::new();
    let mut failures = Vec::new();
    for (line, outcome) in results {
        match outcome {
            Ok(m) => measured.push(m),
            Err(e) => failures.push(RecordFailure {
                line,
                error: format!("{e:#}"),
            }),
        }
    }

    // Group means over the whole sampled group per question.
    let mut group_lengths: HashMap<&str, Vec<usize>> = HashMap::new();
    for m in &measured {
        group_lengths
            .entry(m.record.question_id.as_str())
            .or_default()
            .push(m.length);
    }
    let means: HashMap<String, f64> = group_lengths
        .into_iter()
        .map(|(qid, lengths)| {
            let mean = mean_length::<f64>(lengths).expect("group is nonempty");
            (qid.to_string(), mean)
        })
        .collect();

    let mut records = Vec::with_capacity(measured.len());
    for m in measured {
        let mean = means[&m.record.question_id];
        let redundancy = redundancy_score(m.review_count, m.node_count, m.length, mean)
            .with_context(|| format!("scoring trajectory {}", m.record.trajectory_id))?;
        records.push(ScoredRecord {
            trajectory_id: m.record.trajectory_id,
            question_id: m.record.question_id,
            question: m.record.question,
            cot: m.record.cot,
            length: m.length,
            review_count: m.review_count,
            node_count: m.node_count,
            correct: m.record.correct,
            redundancy,
        });
    }
    runner.finish(out, &records, failures)
}

pub fn make_dpo_pairs(runner: &Runner, input: &Path, out: &Path) -> anyhow::Result<()> {
    let (records, failures) = runner.load_all::<ScoredRecord>(input)?;

    // Groups in first-seen order.
    let mut group_order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&ScoredRecord>> = HashMap::new();
    for (_, record) in &records {
        if !groups.contains_key(&record.question_id) {
            group_order.push(record.question_id.clone());
        }
        groups.entry(record.question_id.clone()).or_default().push(record);
    }

    let mut pairs = Vec::new();
    for qid in group_order {
        let members = &groups[&qid];
        let trajectories: Vec<cotdag::ScoredTrajectory> =
            members.iter().map(|r| r.to_scored_trajectory()).collect();
        if let Some((preferred, dispreferred)) = build_dpo_pairs(&trajectories) {
            let by_id: HashMap<&str, &ScoredRecord> = members
                .iter()
                .map(|r| (r.trajectory_id.as_str(), *r))
                .collect();
            let pref = by_id[preferred.trajectory_id.as_str()];
            let dis = by_id[dispreferred.trajectory_id.as_str()];
            pairs.push(DpoPairRecord {
                question_id: qid,
                question: pref.question.clone(),
                preferred_cot: pref.cot.clone(),
                dispreferred_cot: dis.cot.clone(),
                r_preferred: preferred.redundancy,
                r_dispreferred: dispreferred.redundancy,
            });
        }
    }
    runner.finish(out, &pairs, failures)
}

pub fn grpo_reward(
    runner: &Runner,
    input: &Path,
    out: &Path,
    params: &RewardParams,
) -> anyhow::Result<()> {
    let (records, mut failures) = runner.load_all::<GrpoInputRecord>(input)?;

    let mut resolved: Vec<(usize, GrpoInputRecord, usize)> = Vec::new();
    for (line, record) in records {
        match record.resolved_length() {
            Some(length) => resolved.push((line, record, length)),
            None => failures.push(RecordFailure {
                line,
                error: format!(
                    "trajectory {} has neither `length` nor `cot`",
                    record.trajectory_id
                ),
            }),
        }
    }
    if !failures.is_empty() && !runner.skip_errors {
        let first = &failures[0];
        bail!("record at line {} failed: {}", first.line, first.error);
    }

    // Group by question, compute rewards, then emit in input order.
    let mut group_order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
    for (idx, (_, record, _)) in resolved.iter().enumerate() {
        if !groups.contains_key(&record.question_id) {
            group_order.push(record.question_id.clone());
        }
        groups.entry(record.question_id.clone()).or_default().push(idx);
    }

    let mut out_records: Vec<Option<cotdag::RewardRecord>> = vec![None; resolved.len()];
    for qid in group_order {
        let indices = &groups[&qid];
        let group: Vec<cotdag::ScoredTrajectory> = indices
            .iter()
            .map(|&i| {
                let (_, record, length) = &resolved[i];
                cotdag::ScoredTrajectory {
                    trajectory_id: record.trajectory_id.clone(),
                    question_id: record.question_id.clone(),
                    length: *length,
                    review_count: 0,
                    node_count: 1,
                    correct: record.correct,
                    redundancy: 0.0,
                }
            })
            .collect();
        for (&i, reward) in indices.iter().zip(grpo_rewards(&group, params)) {
            out_records[i] = Some(reward);
        }
    }
    let records: Vec<cotdag::RewardRecord> = out_records.into_iter().flatten().collect();
    runner.finish(out, &records, failures)
}

pub fn stats_cmd(
    runner: &Runner,
    full_path: &Path,
    pruned_path: &Path,
    out: &Path,
    responses: Option<&Path>,
    keywords: Option<&str>,
) -> anyhow::Result<()> {
    let (full_records, mut failures) = runner.load_all::<GraphRecord>(full_path)?;
    let (pruned_records, pruned_failures) = runner.load_all::<GraphRecord>(pruned_path)?;
    failures.extend(pruned_failures);

    let full_by_id: HashMap<&str, &GraphRecord> = full_records
        .iter()
        .map(|(_, r)| (r.trace_id.as_str(), r))
        .collect();

    struct Materialized {
        full: ReasoningGraph,
        pruned: ReasoningGraph,
        full_cot: String,
        pruned_cot: String,
    }
    let mut samples = Vec::new();
    for (line, pruned) in &pruned_records {
        let Some(full) = full_by_id.get(pruned.trace_id.as_str()) else {
            failures.push(RecordFailure {
                line: *line,
                error: format!("trace {} missing from --full input", pruned.trace_id),
            });
            continue;
        };
        let trace = full.to_trace();
        match cotdag::relinearize(&pruned.graph, &trace) {
            Ok(pruned_cot) => samples.push(Materialized {
                full: full.graph.clone(),
                pruned: pruned.graph.clone(),
                full_cot: trace.trace.cot,
                pruned_cot,
            }),
            Err(e) => failures.push(RecordFailure {
                line: *line,
                error: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() && !runner.skip_errors {
        let first = &failures[0];
        bail!("record at line {} failed: {}", first.line, first.error);
    }

    let pairs: Vec<SamplePair> = samples
        .iter()
        .map(|s| SamplePair {
            full: &s.full,
            pruned: &s.pruned,
            full_cot: &s.full_cot,
            pruned_cot: &s.pruned_cot,
        })
        .collect();
    let stats = dataset_stats::<f64>(&pairs)?;

    println!("dataset statistics ({} samples)", stats.total_samples);
    println!("  {:<22} {:>10} {:>10}", "statistic", "full", "pruned");
    println!("  {:<22} {:>10.2} {:>10.2}", "avg nodes", stats.avg_nodes_full, stats.avg_nodes_pruned);
    println!("  {:<22} {:>10.2} {:>10.2}", "avg review nodes", stats.avg_review_full, stats.avg_review_pruned);
    println!("  {:<22} {:>10.1} {:>10.1}", "avg tokens", stats.avg_tokens_full, stats.avg_tokens_pruned);
    println!("  review nodes removed: {:.1}%", stats.review_removed_fraction * 100.0);

    let mut payload = serde_json::json!({ "dataset": stats });

    if let Some(responses_path) = responses {
        let (rows, response_failures) = runner.load_all::<ResponseRecord>(responses_path)?;
        if !response_failures.is_empty() && !runner.skip_errors {
            bail!("failed to parse {}", responses_path.display());
        }
        let texts: Vec<String> = rows.into_iter().map(|(_, r)| r.into_text()).collect();
        let keywords: Vec<String> = match keywords {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        };
        let frequencies = keyword_frequencies::<f64, _>(&texts, &keywords);
        println!("keyword frequency (mean occurrences per response, {} responses)", texts.len());
        for (kw, mean) in &frequencies {
            println!("  {kw:<22} {mean:>10.3}");
        }
        payload["keywords"] = serde_json::json!(frequencies
            .iter()
            .map(|(kw, mean)| serde_json::json!({"keyword": kw, "mean_per_response": mean}))
            .collect::<Vec<_>>());
    }

    write_json(out, &payload)?;
    if !failures.is_empty() {
        let sidecar = sidecar_path(out);
        write_jsonl(&sidecar, &failures)?;
        eprintln!(
            "skipped {} failing record(s); details in {}",
            failures.len(),
            sidecar.display()
        );
    }
    Ok(())
}

pub fn eval_labels(
    runner: &Runner,
    graphs_path: &Path,
    gold_path: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let (graph_records, mut failures) = runner.load_all::<GraphRecord>(graphs_path)?;
    let (gold_rows, gold_failures) = runner.load_all::<GoldRow>(gold_path)?;
    failures.extend(gold_failures);

    let graphs: HashMap<&str, &ReasoningGraph> = graph_records
        .iter()
        .map(|(_, r)| (r.trace_id.as_str(), &r.graph))
        .collect();

    let mut predicted = Vec::new();
    let mut gold = Vec::new();
    let mut atomic = Vec::new();
    for (line, row) in &gold_rows {
        let node = row.node_ref.split_once('#').and_then(|(trace_id, node)| {
            let id = cotdag::NodeId::new(node).ok()?;
            graphs.get(trace_id)?.node(&id)
        });
        match node {
            Some(node) => {
                predicted.push(node.node_type);
                gold.push(row.gold_type);
                atomic.push(row.atomic);
            }
            None => failures.push(RecordFailure {
                line: *line,
                error: format!("node_ref `{}` does not resolve to a graph node", row.node_ref),
            }),
        }
    }
    if !failures.is_empty() && !runner.skip_errors {
        let first = &failures[0];
        bail!("record at line {} failed: {}", first.line, first.error);
    }

    let metrics = label_metrics::<f64>(&predicted, &gold, &atomic)?;
    println!("node label evaluation ({} nodes)", predicted.len());
    println!("  {:<10} {:>10} {:>10} {:>10}", "class", "precision", "recall", "f1");
    for (name, class) in [("review", &metrics.review), ("progress", &metrics.progress)] {
        println!(
            "  {:<10} {:>10.4} {:>10.4} {:>10.4}",
            name, class.precision, class.recall, class.f1
        );
    }
    println!("  atomicity valid: {:.2}%", metrics.atomicity_rate * 100.0);
    println!("  valid nodes:     {:.2}%", metrics.valid_rate * 100.0);

    let payload = serde_json::json!({
        "evaluated_nodes": predicted.len(),
        "metrics": metrics,
    });
    write_json(out, &payload)?;
    if !failures.is_empty() {
        let sidecar = sidecar_path(out);
        write_jsonl(&sidecar, &failures)?;
        eprintln!(
            "skipped {} unresolved row(s); details in {}",
            failures.len(),
            sidecar.display()
        );
    }
    Ok(())
}

pub fn export_mermaid(
    runner: &Runner,
    input: &Path,
    out: &Path,
    trace_id: Option<&str>,
) -> anyhow::Result<()> {
    let (records, _failures) = runner.load_all::<GraphRecord>(input)?;
    let selected: Vec<&GraphRecord> = records
        .iter()
        .map(|(_, r)| r)
        .filter(|r| trace_id.is_none_or(|id| r.trace_id == id))
        .collect();
    match selected.as_slice() {
        [] => bail!(
            "no graph records matched{}",
            trace_id.map(|t| format!(" trace_id `{t}`")).unwrap_or_default()
        ),
        [record] => {
            std::fs::write(out, record.graph.to_mermaid())
                .with_context(|| format!("writing {}", out.display()))?;
        }
        many => {
            std::fs::create_dir_all(out)
                .with_context(|| format!("creating directory {}", out.display()))?;
            for record in many {
                let path = out.join(format!("{}.mmd", record.trace_id));
                std::fs::write(&path, record.graph.to_mermaid())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}
