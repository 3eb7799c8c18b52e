//! `cotdag` — turn linear chain-of-thought traces into dependency graphs,
//! prune redundant reflection, and emit training-ready datasets and rewards.

mod commands;
mod config;
mod records;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{make_oracle, report_ledger, resolve_triggers, Runner};
use config::{BackendKind, FileConfig};
use cotdag::score::RewardParams as GenericRewardParams;
use cotdag::{PruneParams, RewardParams};

#[derive(Parser)]
#[command(
    name = "cotdag",
    version,
    about = "Chain-of-thought graph construction, pruning, and reward tooling",
    after_help = "Config file: a flat TOML document whose keys mirror the flags; flags override the file."
)]
struct Cli {
    /// Flat TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for record-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log failing records to `<out>.errors` and keep going instead of
    /// aborting on the first failure.
    #[arg(long, global = true)]
    skip_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split raw traces into trigger-delimited chunks.
    Chunk {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trigger list file (one per line), or the literal `default`.
        #[arg(long)]
        triggers: Option<String>,
    },
    /// Construct a dependency graph per chunked trace.
    BuildGraph {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Operation oracle: `heuristic` (offline, deterministic) or `llm`.
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Response cache path; enables caching when present.
        #[arg(long, num_args = 0..=1, default_missing_value = "llm_cache.jsonl")]
        cache: Option<PathBuf>,
    },
    /// Remove redundant review nodes from constructed graphs.
    Prune {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Descendant threshold: review nodes with fewer than k descendants
        /// are pruned.
        #[arg(long)]
        k: Option<usize>,
        /// Relative-depth threshold in (0, 1].
        #[arg(long)]
        m: Option<f64>,
    },
    /// Re-emit surviving chunks as supervised fine-tuning records.
    Relinearize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// chunk, build-graph, prune, and relinearize fused into one pass.
    MakeSft {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        triggers: Option<String>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long, num_args = 0..=1, default_missing_value = "llm_cache.jsonl")]
        cache: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        m: Option<f64>,
    },
    /// Score sampled trajectories: graph measurements plus redundancy.
    Score {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        triggers: Option<String>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long, num_args = 0..=1, default_missing_value = "llm_cache.jsonl")]
        cache: Option<PathBuf>,
    },
    /// Build (preferred, dispreferred) pairs from scored trajectories.
    MakeDpoPairs {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute length-penalized group rewards.
    GrpoReward {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Penalty weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Tolerance margin in tokens.
        #[arg(long)]
        delta: Option<f64>,
        /// Penalty sharpness (>= 1).
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Corpus statistics over full vs pruned graph files, with optional
    /// keyword frequency analysis.
    Stats {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSONL of responses ({"text": ...} or {"cot": ...}) for keyword
        /// counting.
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Comma-separated keyword list; defaults to the built-in
        /// reflection set.
        #[arg(long)]
        keywords: Option<String>,
    },
    /// Precision/recall/F1 of node type labels against gold annotations.
    EvalLabels {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write graphs out as Mermaid text (a single file for one record, a
    /// directory of .mmd files for many).
    ExportMermaid {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Select a single record by trace id.
        #[arg(long)]
        trace_id: Option<String>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let file_config = FileConfig::load(cli.config.as_deref())?;
    let runner = Runner {
        jobs: cli.jobs.or(file_config.jobs).unwrap_or(1),
        skip_errors: cli.skip_errors,
    };

    match cli.command {
        Command::Chunk {
            input,
            out,
            triggers,
        } => {
            let triggers = resolve_triggers(triggers.as_deref(), &file_config)?;
            commands::chunk(&runner, &input, &out, &triggers)
        }
        Command::BuildGraph {
            input,
            out,
            backend,
            cache,
        } => {
            let kind = backend.or(file_config.backend).unwrap_or(BackendKind::Heuristic);
            let cache = cache.or_else(|| file_config.cache.clone());
            let (oracle, client) = make_oracle(kind, file_config.backend_config(), cache.as_deref())?;
            let result = commands::build_graph_cmd(
                &runner,
                &input,
                &out,
                oracle.as_ref(),
                &file_config.oracle_config(),
            );
            if let Some(client) = client {
                report_ledger(&client);
            }
            result
        }
        Command::Prune { input, out, k, m } => {
            let params = resolve_prune_params(k, m, &file_config)?;
            commands::prune_cmd(&runner, &input, &out, &params)
        }
        Command::Relinearize { input, out } => commands::relinearize_cmd(&runner, &input, &out),
        Command::MakeSft {
            input,
            out,
            triggers,
            backend,
            cache,
            k,
            m,
        } => {
            let triggers = resolve_triggers(triggers.as_deref(), &file_config)?;
            let kind = backend.or(file_config.backend).unwrap_or(BackendKind::Heuristic);
            let cache = cache.or_else(|| file_config.cache.clone());
            let (oracle, client) = make_oracle(kind, file_config.backend_config(), cache.as_deref())?;
            let params = resolve_prune_params(k, m, &file_config)?;
            let result = commands::make_sft(
                &runner,
                &input,
                &out,
                &triggers,
                oracle.as_ref(),
                &file_config.oracle_config(),
                &params,
            );
            if let Some(client) = client {
                report_ledger(&client);
            }
            result
        }
        Command::Score {
            input,
            out,
            triggers,
            backend,
            cache,
        } => {
            let triggers = resolve_triggers(triggers.as_deref(), &file_config)?;
            let kind = backend.or(file_config.backend).unwrap_or(BackendKind::Heuristic);
            let cache = cache.or_else(|| file_config.cache.clone());
            let (oracle, client) = make_oracle(kind, file_config.backend_config(), cache.as_deref())?;
            let result = commands::score_cmd(
                &runner,
                &input,
                &out,
                &triggers,
                oracle.as_ref(),
                &file_config.oracle_config(),
            );
            if let Some(client) = client {
                report_ledger(&client);
            }
            result
        }
        Command::MakeDpoPairs { input, out } => commands::make_dpo_pairs(&runner, &input, &out),
        Command::GrpoReward {
            input,
            out,
            lambda,
            delta,
            gamma,
        } => {
            let defaults = RewardParams::default();
            let params = GenericRewardParams::new(
                lambda.or(file_config.lambda).unwrap_or(defaults.lambda),
                delta.or(file_config.delta).unwrap_or(defaults.delta),
                gamma.or(file_config.gamma).unwrap_or(defaults.gamma),
            )?;
            commands::grpo_reward(&runner, &input, &out, &params)
        }
        Command::Stats {
            full,
            pruned,
            out,
            responses,
            keywords,
        } => {
            let keywords = keywords.or_else(|| file_config.keywords.clone());
            commands::stats_cmd(
                &runner,
                &full,
                &pruned,
                &out,
                responses.as_deref(),
                keywords.as_deref(),
            )
        }
        Command::EvalLabels { graphs, gold, out } => {
            commands::eval_labels(&runner, &graphs, &gold, &out)
        }
        Command::ExportMermaid {
            input,
            out,
            trace_id,
        } => commands::export_mermaid(&runner, &input, &out, trace_id.as_deref()),
    }
}

fn resolve_prune_params(
    k: Option<usize>,
    m: Option<f64>,
    file_config: &FileConfig,
) -> anyhow::Result<PruneParams> {
    let defaults = PruneParams::default();
    Ok(cotdag::prune::PruneParams::new(
        k.or(file_config.k).unwrap_or(defaults.k),
        m.or(file_config.m).unwrap_or(defaults.m),
    )?)
}
