//! Pipeline driver. Each stage subcommand runs exactly one stage against
//! the artifact store in the configured workdir; `run` executes a selection
//! in dependency order. Exit codes: 0 success, 2 configuration error,
//! 3 stage failure.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grade_core::pipeline::config::ComponentCount;
use grade_core::pipeline::{run_pipeline, Config, ConfigError, PipelineError, StageStatus};

#[derive(Parser)]
#[command(
    name = "grade",
    version,
    about = "Builds a difficulty-graded multi-hop QA benchmark from a text corpus and evaluates RAG systems against it"
)]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true, default_value = "grade.toml", value_name = "PATH")]
    config: PathBuf,

    /// Print what would run without executing or writing anything
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import the corpus: filter articles by length, split sentences
    Ingest {
        /// Corpus JSONL, one article per line; overrides the configured path
        #[arg(long = "in", value_name = "PATH")]
        input: Option<String>,
        /// Domain tag stamped on every article
        #[arg(long)]
        domain: Option<String>,
        /// Drop articles shorter than this many tokens
        #[arg(long)]
        min_tokens: Option<usize>,
        /// Drop articles longer than this many tokens
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Split articles into overlapping chunks and embed them
    Chunk {
        /// Minimum chunk length in tokens
        #[arg(long)]
        min: Option<usize>,
        /// Maximum chunk length in tokens
        #[arg(long)]
        max: Option<usize>,
        /// Tokens shared between consecutive chunks
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Rewrite factual sentences as self-contained claims
    Claims {
        /// Sentences artifact; must be the workdir's sentences.jsonl
        #[arg(long = "in", value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Extract subject-predicate-object triples from verified claims
    Triples,
    /// Assemble the knowledge graph from extracted triples
    Graph,
    /// Cluster claim embeddings with a Gaussian mixture
    Cluster {
        /// Component count: "auto" or a positive integer
        #[arg(long)]
        k: Option<String>,
        /// Minimum responsibility for a confident assignment
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Find equivalent entities within each cluster
    Link,
    /// Merge equivalent nodes and mirror intra-cluster edges
    Augment,
    /// Enumerate shortest reasoning paths and sample per hop count
    Paths {
        /// Paths kept per hop count
        #[arg(long)]
        per_hop: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a question/answer pair for each sampled path
    Qagen,
    /// Check generated pairs for answerability and faithfulness
    Validate,
    /// Score retrieval difficulty and bin pairs into the hop/difficulty matrix
    Score {
        /// Similarity aggregator: min | mean | pmean:<p>
        #[arg(long)]
        agg: Option<String>,
        /// Bin within each hop row (default) or over the pooled scores
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        per_hop: Option<bool>,
    },
    /// Answer the benchmark with a RAG system and judge the answers
    Eval {
        /// Chunks retrieved per question
        #[arg(long)]
        k: Option<usize>,
        /// Model id recorded with the results
        #[arg(long)]
        model: Option<String>,
    },
    /// Write summary.json and the plot-ready CSV tables
    Report,
    /// Run a stage selection in dependency order
    Run {
        /// Comma-separated stage names, or "all"
        #[arg(long, value_delimiter = ',', default_value = "all")]
        stages: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = Config::load(&cli.config)?;
    let stages = apply_command(&mut config, &cli.command)?;
    let plan = run_pipeline(&config, &stages, cli.dry_run)?;
    for entry in &plan {
        println!("{:<9} {}", entry.stage, status_label(entry.status));
    }
    Ok(())
}

fn status_label(status: StageStatus) -> &'static str {
    match status {
        StageStatus::Ran => "ran",
        StageStatus::UpToDate => "up to date",
        StageStatus::WouldRun => "would run",
    }
}

/// Folds subcommand flags into the loaded config and names the stages to
/// run. Flag overrides participate in the manifest's parameter
/// fingerprints exactly like edits to the config file.
fn apply_command(config: &mut Config, command: &Command) -> Result<Vec<String>, PipelineError> {
    fn one(name: &str) -> Vec<String> {
        vec![name.to_string()]
    }
    let stages = match command {
        Command::Ingest {
            input,
            domain,
            min_tokens,
            max_tokens,
        } => {
            if let Some(input) = input {
                config.corpus.input = input.clone();
            }
            if let Some(domain) = domain {
                config.corpus.domain = domain.clone();
            }
            if let Some(v) = min_tokens {
                config.corpus.min_tokens = *v;
            }
            if let Some(v) = max_tokens {
                config.corpus.max_tokens = *v;
            }
            one("ingest")
        }
        Command::Chunk { min, max, overlap } => {
            if let Some(v) = min {
                config.corpus.chunk_min = *v;
            }
            if let Some(v) = max {
                config.corpus.chunk_max = *v;
            }
            if let Some(v) = overlap {
                config.corpus.chunk_overlap = *v;
            }
            one("chunk")
        }
        Command::Claims { input } => {
            if let Some(path) = input {
                let expected = Path::new(&config.workdir).join("sentences.jsonl");
                if path != Path::new("sentences.jsonl") && path != &expected {
                    return Err(ConfigError::Invalid(format!(
                        "the claims stage reads {}; to use sentences from another run, point --config at that run's configuration",
                        expected.display()
                    ))
                    .into());
                }
            }
            one("claims")
        }
        Command::Triples => one("triples"),
        Command::Graph => one("graph"),
        Command::Cluster { k, tau, seed } => {
            if let Some(k) = k {
                // Non-numeric strings flow into config validation, which
                // accepts only "auto".
                config.clustering.k = match k.parse::<usize>() {
                    Ok(n) => ComponentCount::Fixed(n),
                    Err(_) => ComponentCount::Named(k.clone()),
                };
            }
            if let Some(v) = tau {
                config.clustering.tau = *v;
            }
            if let Some(v) = seed {
                config.clustering.seed = *v;
            }
            one("cluster")
        }
        Command::Link => one("link"),
        Command::Augment => one("augment"),
        Command::Paths { per_hop, seed } => {
            if let Some(v) = per_hop {
                config.paths.per_hop = *v;
            }
            if let Some(v) = seed {
                config.paths.seed = *v;
            }
            one("paths")
        }
        Command::Qagen => one("qagen"),
        Command::Validate => one("validate"),
        Command::Score { agg, per_hop } => {
            if let Some(agg) = agg {
                config.difficulty.aggregator = agg.clone();
            }
            if let Some(v) = per_hop {
                config.difficulty.per_hop = *v;
            }
            one("score")
        }
        Command::Eval { k, model } => {
            if let Some(v) = k {
                config.eval.k = *v;
            }
            if let Some(model) = model {
                config.eval.model = model.clone();
            }
            one("eval")
        }
        Command::Report => one("report"),
        Command::Run { stages } => stages.clone(),
    };
    Ok(stages)
}
