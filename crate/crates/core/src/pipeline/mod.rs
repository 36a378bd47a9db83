//! Stage orchestration. The pipeline is an explicit acyclic list of stages,
//! each declaring the artifacts it reads and writes; a manifest of content
//! hashes makes re-runs incremental and detects stale inputs.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use artifacts::{
    file_hash, read_json, read_jsonl, write_json, write_jsonl, write_text, ArtifactError,
};
pub use config::{Config, ConfigError, ProviderKind, RagKind};
pub use manifest::{now_unix, RunManifest, StageRecord};
pub use stages::StageFailure;

use crate::gateway::Gateway;
use crate::hashing::short_hash;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Pseudo-artifact name for the external corpus file.
pub const CORPUS_INPUT: &str = "corpus.input";

/// Pseudo-input carrying the fingerprint of the stage's configuration, so
/// config changes invalidate cached runs exactly like changed files.
const PARAMS_KEY: &str = "~params";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub name: &'static str,
    pub inputs: &'static [&'static str],
    pub outputs: &'static [&'static str],
}

/// Dependency order; every stage's inputs are produced by earlier stages
/// (or, for ingest, supplied externally).
pub const STAGES: &[StageSpec] = &[
    StageSpec {
        name: "ingest",
        inputs: &[CORPUS_INPUT],
        outputs: &["articles.jsonl", "sentences.jsonl"],
    },
    StageSpec {
        name: "chunk",
        inputs: &["articles.jsonl"],
        outputs: &["chunks.jsonl"],
    },
    StageSpec {
        name: "claims",
        inputs: &["sentences.jsonl", "articles.jsonl"],
        outputs: &["claims.jsonl"],
    },
    StageSpec {
        name: "triples",
        inputs: &["claims.jsonl"],
        outputs: &["triples.jsonl"],
    },
    StageSpec {
        name: "graph",
        inputs: &["triples.jsonl"],
        outputs: &["graph.json"],
    },
    StageSpec {
        name: "cluster",
        inputs: &["claims.jsonl"],
        outputs: &["gmm.json", "clusters.jsonl"],
    },
    StageSpec {
        name: "link",
        inputs: &["clusters.jsonl", "claims.jsonl", "triples.jsonl", "gmm.json"],
        outputs: &["equivalences.jsonl"],
    },
    StageSpec {
        name: "augment",
        inputs: &["graph.json", "equivalences.jsonl", "clusters.jsonl"],
        outputs: &["graph.augmented.json"],
    },
    StageSpec {
        name: "paths",
        inputs: &["graph.augmented.json"],
        outputs: &["paths.jsonl"],
    },
    StageSpec {
        name: "qagen",
        inputs: &[
            "paths.jsonl",
            "graph.augmented.json",
            "claims.jsonl",
            "sentences.jsonl",
            "chunks.jsonl",
        ],
        outputs: &["qa.generated.jsonl"],
    },
    StageSpec {
        name: "validate",
        inputs: &["qa.generated.jsonl"],
        outputs: &["qa.jsonl"],
    },
    StageSpec {
        name: "score",
        inputs: &["qa.jsonl", "chunks.jsonl"],
        outputs: &["difficulty.jsonl", "matrix.json"],
    },
    StageSpec {
        name: "eval",
        inputs: &["qa.jsonl", "chunks.jsonl", "matrix.json"],
        outputs: &["eval.jsonl"],
    },
    StageSpec {
        name: "report",
        inputs: &["eval.jsonl", "matrix.json", "difficulty.jsonl", "qa.jsonl"],
        outputs: &["summary.json", "matrix.csv", "matrix.2bin.csv", "trends.csv"],
    },
];

pub fn stage_names() -> Vec<&'static str> {
    STAGES.iter().map(|s| s.name).collect()
}

fn needs_provider(stage: &str) -> bool {
    matches!(
        stage,
        "chunk" | "claims" | "triples" | "cluster" | "link" | "qagen" | "validate" | "score"
            | "eval"
    )
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown stage {0:?}; stages are {}", stage_names().join(", "))]
    UnknownStage(String),
    #[error("stage {stage} requires artifact {artifact}, which does not exist; run the producing stage first")]
    MissingArtifact {
        stage: &'static str,
        artifact: String,
    },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        source: StageFailure,
    },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for stage
    /// failures, matching the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UnknownStage(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    /// Executed in this invocation.
    Ran,
    /// Inputs and outputs match the manifest; skipped.
    UpToDate,
    /// Dry-run only: would execute.
    WouldRun,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub stage: &'static str,
    pub status: StageStatus,
}

/// Resolves a stage selection. Empty or ["all"] selects every stage; an
/// explicit subset runs in dependency order regardless of argument order.
pub fn select_stages(requested: &[String]) -> Result<Vec<&'static StageSpec>, PipelineError> {
    if requested.is_empty() || (requested.len() == 1 && requested[0] == "all") {
        return Ok(STAGES.iter().collect());
    }
    for name in requested {
        if !STAGES.iter().any(|s| s.name == name) {
            return Err(PipelineError::UnknownStage(name.clone()));
        }
    }
    Ok(STAGES
        .iter()
        .filter(|s| requested.iter().any(|r| r == s.name))
        .collect())
}

fn artifact_path(config: &Config, workdir: &Path, name: &str) -> PathBuf {
    if name == CORPUS_INPUT {
        PathBuf::from(&config.corpus.input)
    } else {
        workdir.join(name)
    }
}

fn chat_signature(config: &Config) -> String {
    let p = &config.provider;
    format!(
        "{:?}|{}|{}|{}",
        p.kind, p.chat_model, p.temperature, p.seed
    )
}

fn embed_signature(config: &Config) -> String {
    let p = &config.provider;
    format!("{:?}|{}", p.kind, p.embedding_model)
}

/// Fingerprint of every config value the stage's behavior depends on.
fn params_fingerprint(stage: &str, config: &Config) -> String {
    let c = &config.corpus;
    let text = match stage {
        "ingest" => format!(
            "{}|{}|{}|{}|{:?}|{}",
            c.input, c.domain, c.min_tokens, c.max_tokens, c.malformed, c.tokenizer
        ),
        "chunk" => format!(
            "{}|{}|{}|{}|{}",
            c.chunk_min,
            c.chunk_max,
            c.chunk_overlap,
            c.tokenizer,
            embed_signature(config)
        ),
        "claims" | "triples" | "link" | "qagen" | "validate" => chat_signature(config),
        "graph" | "augment" | "report" => String::new(),
        "cluster" => {
            let s = &config.clustering;
            format!(
                "{:?}|{}|{}|{}|{}|{}|{}",
                s.k,
                s.tau,
                s.seed,
                s.max_iters,
                s.tol,
                s.bic_sweep,
                embed_signature(config)
            )
        }
        "paths" => {
            let s = &config.paths;
            format!("{}|{}|{}", s.per_hop, s.seed, s.pair_cap)
        }
        "score" => format!(
            "{}|{}|{}",
            config.difficulty.aggregator,
            config.difficulty.per_hop,
            embed_signature(config)
        ),
        "eval" => format!(
            "{}|{}|{:?}|{:?}|{}|{}",
            config.eval.k,
            config.eval.model,
            config.eval.rag,
            config.eval.subprocess,
            chat_signature(config),
            embed_signature(config)
        ),
        other => panic!("no fingerprint rule for stage {other}"),
    };
    short_hash(&text)
}

fn execute(
    stage: &'static str,
    config: &Config,
    workdir: &Path,
    gateway: Option<&Gateway>,
) -> Result<(), StageFailure> {
    let gw = || gateway.expect("engine builds a gateway for provider stages");
    match stage {
        "ingest" => stages::ingest(config, workdir),
        "chunk" => stages::chunk(config, workdir, gw()),
        "claims" => stages::claims(config, workdir, gw()),
        "triples" => stages::triples(config, workdir, gw()),
        "graph" => stages::graph(workdir),
        "cluster" => stages::cluster(config, workdir, gw()),
        "link" => stages::link(workdir, gw()),
        "augment" => stages::augment(workdir),
        "paths" => stages::paths(config, workdir),
        "qagen" => stages::qagen(workdir, gw()),
        "validate" => stages::validate(workdir, gw()),
        "score" => stages::score(config, workdir, gw()),
        "eval" => stages::eval(config, workdir, gw()),
        "report" => stages::report(workdir),
        other => panic!("no implementation for stage {other}"),
    }
}

// Only existence matters here: an edited output does not re-run its
// producer (the producer's inputs are unchanged), it goes stale as an
// input of whichever stage reads it next.
fn outputs_intact(record: &StageRecord, config: &Config, workdir: &Path) -> bool {
    record
        .outputs
        .keys()
        .all(|name| artifact_path(config, workdir, name).exists())
}

/// Runs the selected stages in dependency order. With `dry_run`, nothing
/// executes and nothing is written; the returned plan says what would
/// happen.
pub fn run_pipeline(
    config: &Config,
    requested: &[String],
    dry_run: bool,
) -> Result<Vec<PlanEntry>, PipelineError> {
    config.validate()?;
    let selected = select_stages(requested)?;
    let workdir = PathBuf::from(&config.workdir);
    std::fs::create_dir_all(&workdir).map_err(|source| {
        PipelineError::Artifact(ArtifactError::Io {
            path: workdir.clone(),
            source,
        })
    })?;
    let manifest_path = workdir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::load_or_new(&manifest_path, config);

    let gateway = if !dry_run && selected.iter().any(|s| needs_provider(s.name)) {
        let gw = config.build_gateway()?;
        let (chat, embed) = gw.provider_ids();
        manifest.chat_provider = chat;
        manifest.embedding_provider = embed;
        Some(gw)
    } else {
        None
    };

    let mut plan = Vec::with_capacity(selected.len());
    for spec in selected {
        let mut inputs = BTreeMap::new();
        let mut missing: Option<String> = None;
        for name in spec.inputs {
            let path = artifact_path(config, &workdir, name);
            if path.exists() {
                inputs.insert(name.to_string(), file_hash(&path)?);
            } else {
                missing = Some(name.to_string());
                break;
            }
        }
        inputs.insert(PARAMS_KEY.to_string(), params_fingerprint(spec.name, config));

        let fresh = missing.is_none()
            && manifest.up_to_date(spec.name, &inputs)
            && outputs_intact(&manifest.stages[spec.name], config, &workdir);

        if dry_run {
            plan.push(PlanEntry {
                stage: spec.name,
                status: if fresh {
                    StageStatus::UpToDate
                } else {
                    StageStatus::WouldRun
                },
            });
            continue;
        }
        if let Some(artifact) = missing {
            return Err(PipelineError::MissingArtifact {
                stage: spec.name,
                artifact,
            });
        }
        if fresh {
            log::info!("{}: up to date", spec.name);
            plan.push(PlanEntry {
                stage: spec.name,
                status: StageStatus::UpToDate,
            });
            continue;
        }
        if manifest.stages.contains_key(spec.name) {
            log::info!("{}: inputs changed, re-running", spec.name);
        }
        let started = now_unix();
        execute(spec.name, config, &workdir, gateway.as_ref()).map_err(|source| {
            // Partial completion: everything recorded so far stays valid.
            let _ = manifest.save(&manifest_path);
            PipelineError::Stage {
                stage: spec.name,
                source,
            }
        })?;
        let mut outputs = BTreeMap::new();
        for name in spec.outputs {
            outputs.insert(name.to_string(), file_hash(&workdir.join(name))?);
        }
        manifest.record_stage(spec.name, inputs, outputs, started);
        manifest.save(&manifest_path)?;
        plan.push(PlanEntry {
            stage: spec.name,
            status: StageStatus::Ran,
        });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture_corpus(path: &Path) {
        // Articles long enough to pass a tiny length filter, with sentences
        // the triple-extraction rule can split on its predicate lexicon.
        let a1 = "Acme Robotics acquired Helios Group. \
                  Helios Group founded Beacon Labs. \
                  Beacon Labs launched the Horizon Probe. \
                  The Horizon Probe triggered the Deep Survey. \
                  Riverside traffic stayed light on Monday morning near the old mill bridge.";
        let a2 = "Northwind Energy sponsors the Harbor Festival. \
                  The Harbor Festival hosts the Lantern Parade. \
                  The Lantern Parade caused the Midnight Closure. \
                  Gulls circled the quiet pier while vendors unpacked crates of glass lanterns.";
        let lines = [
            serde_json::json!({"id": "a1", "text": a1}).to_string(),
            serde_json::json!({"id": "a2", "text": a2}).to_string(),
        ];
        fs::write(path, lines.join("\n") + "\n").unwrap();
    }

    fn fixture_config(dir: &Path) -> Config {
        let corpus = dir.join("corpus.jsonl");
        write_fixture_corpus(&corpus);
        let mut config = Config::default();
        config.workdir = dir.join("out").to_string_lossy().into_owned();
        config.corpus.input = corpus.to_string_lossy().into_owned();
        config.corpus.min_tokens = 5;
        config.corpus.max_tokens = 10_000;
        config.corpus.chunk_min = 1;
        config.corpus.chunk_max = 24;
        config.corpus.chunk_overlap = 4;
        config.clustering.k = config::ComponentCount::Fixed(2);
        config
    }

    #[test]
    fn selection_accepts_all_and_orders_subsets() {
        let all = select_stages(&[]).unwrap();
        assert_eq!(all.len(), STAGES.len());
        let subset = select_stages(&["report".into(), "ingest".into(), "score".into()]).unwrap();
        let names: Vec<&str> = subset.iter().map(|s| s.name).collect();
        assert_eq!(names, vec!["ingest", "score", "report"]);
        let err = select_stages(&["paths".into(), "grade".into()]).unwrap_err();
        assert!(matches!(err, PipelineError::UnknownStage(ref s) if s == "grade"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn requesting_a_stage_without_its_inputs_names_the_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture_config(dir.path());
        config.corpus.input = dir.path().join("corpus.jsonl").to_string_lossy().into_owned();
        let err = run_pipeline(&config, &["eval".to_string()], false).unwrap_err();
        match &err {
            PipelineError::MissingArtifact { stage, artifact } => {
                assert_eq!(*stage, "eval");
                assert_eq!(artifact, "qa.jsonl");
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn eval_requires_the_score_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let workdir = PathBuf::from(&config.workdir);
        fs::create_dir_all(&workdir).unwrap();
        fs::write(workdir.join("qa.jsonl"), "").unwrap();
        fs::write(workdir.join("chunks.jsonl"), "").unwrap();
        let err = run_pipeline(&config, &["eval".to_string()], false).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage, artifact } => {
                assert_eq!(stage, "eval");
                assert_eq!(artifact, "matrix.json");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dry_run_plans_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let plan = run_pipeline(&config, &[], true).unwrap();
        assert_eq!(plan.len(), STAGES.len());
        assert!(plan.iter().all(|e| e.status == StageStatus::WouldRun));
        let workdir = PathBuf::from(&config.workdir);
        assert!(!workdir.join("articles.jsonl").exists());
        assert!(!workdir.join(MANIFEST_FILE).exists());
    }

    #[test]
    fn full_mock_run_completes_resumes_and_detects_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let workdir = PathBuf::from(&config.workdir);

        let first = run_pipeline(&config, &[], false).unwrap();
        assert!(first.iter().all(|e| e.status == StageStatus::Ran));
        for name in [
            "articles.jsonl",
            "chunks.jsonl",
            "claims.jsonl",
            "graph.json",
            "graph.augmented.json",
            "qa.jsonl",
            "difficulty.jsonl",
            "matrix.json",
            "eval.jsonl",
            "summary.json",
            "matrix.csv",
            "trends.csv",
            MANIFEST_FILE,
        ] {
            assert!(workdir.join(name).exists(), "{name} missing");
        }

        // Unchanged rerun is a no-op for every stage.
        let second = run_pipeline(&config, &[], false).unwrap();
        assert!(second.iter().all(|e| e.status == StageStatus::UpToDate));

        // A stale upstream artifact forces downstream stages to re-run.
        let claims_path = workdir.join("claims.jsonl");
        let mut text = fs::read_to_string(&claims_path).unwrap();
        text = text.replacen("Acme Robotics", "Acme  Robotics", 1);
        fs::write(&claims_path, text).unwrap();
        let third = run_pipeline(&config, &[], false).unwrap();
        let by_name: BTreeMap<&str, StageStatus> =
            third.iter().map(|e| (e.stage, e.status)).collect();
        assert_eq!(by_name["ingest"], StageStatus::UpToDate);
        assert_eq!(by_name["chunk"], StageStatus::UpToDate);
        assert_eq!(by_name["claims"], StageStatus::UpToDate);
        assert_eq!(by_name["triples"], StageStatus::Ran);
        assert_eq!(by_name["cluster"], StageStatus::Ran);

        // The manifest recorded hashes for every stage input and output.
        let manifest = RunManifest::load_or_new(&workdir.join(MANIFEST_FILE), &config);
        let record = &manifest.stages["score"];
        assert!(record.inputs.contains_key("qa.jsonl"));
        assert!(record.outputs.contains_key("matrix.json"));
    }

    #[test]
    fn config_changes_invalidate_only_dependent_stages() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture_config(dir.path());
        run_pipeline(&config, &[], false).unwrap();

        config.paths.seed = 99;
        let plan = run_pipeline(&config, &[], false).unwrap();
        let by_name: BTreeMap<&str, StageStatus> =
            plan.iter().map(|e| (e.stage, e.status)).collect();
        assert_eq!(by_name["augment"], StageStatus::UpToDate);
        assert_eq!(by_name["paths"], StageStatus::Ran);
    }
}
