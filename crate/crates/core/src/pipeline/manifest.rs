//! The run manifest records, per stage, the hash of every artifact read and
//! written plus a fingerprint of the stage's configuration. A stage whose
//! recorded inputs match the current files is up to date and skipped; any
//! hash mismatch marks it stale and forces a re-run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::hashing::short_hash;

use super::artifacts::{read_json, write_json, ArtifactError};
use super::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Artifact name (or "params") to content hash, as read.
    pub inputs: BTreeMap<String, String>,
    /// Artifact name to content hash, as written.
    pub outputs: BTreeMap<String, String>,
    /// Unix seconds; informational only, never part of hashed artifacts.
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Resolved configuration as TOML; contains no secrets (the provider
    /// section names an env var rather than a key).
    pub config_snapshot: String,
    pub config_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub chat_provider: String,
    pub embedding_provider: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: &Config) -> RunManifest {
        let snapshot = toml::to_string_pretty(config).expect("config serializes");
        let fingerprint = short_hash(&snapshot);
        RunManifest {
            run_id: format!("run-{fingerprint}"),
            config_snapshot: snapshot,
            config_fingerprint: fingerprint,
            seeds: BTreeMap::from([
                ("provider".to_string(), config.provider.seed),
                ("clustering".to_string(), config.clustering.seed),
                ("paths".to_string(), config.paths.seed),
            ]),
            chat_provider: String::new(),
            embedding_provider: String::new(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest beside the artifacts, starting fresh when absent.
    /// A changed configuration refreshes the run identity but keeps the
    /// stage records: each record carries a fingerprint of the stage's own
    /// parameters as a pseudo-input, so only stages whose parameters
    /// actually changed go stale.
    pub fn load_or_new(path: &Path, config: &Config) -> RunManifest {
        let mut fresh = RunManifest::new(config);
        match read_json::<RunManifest>(path) {
            Ok(existing) if existing.config_fingerprint == fresh.config_fingerprint => existing,
            Ok(existing) => {
                log::info!("configuration changed; stage records retained for staleness checks");
                fresh.stages = existing.stages;
                fresh.chat_provider = existing.chat_provider;
                fresh.embedding_provider = existing.embedding_provider;
                fresh
            }
            Err(ArtifactError::Io { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                fresh
            }
            Err(e) => {
                log::warn!("manifest unreadable ({e}); starting fresh");
                fresh
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        write_json(path, self)
    }

    /// True when the stage already ran with exactly these inputs.
    pub fn up_to_date(&self, stage: &str, current_inputs: &BTreeMap<String, String>) -> bool {
        self.stages
            .get(stage)
            .is_some_and(|record| &record.inputs == current_inputs)
    }

    pub fn record_stage(
        &mut self,
        stage: &str,
        inputs: BTreeMap<String, String>,
        outputs: BTreeMap<String, String>,
        started_at: u64,
    ) {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs,
                outputs,
                started_at,
                finished_at: now_unix(),
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_is_stable_for_identical_configs() {
        let a = RunManifest::new(&Config::default());
        let b = RunManifest::new(&Config::default());
        assert_eq!(a.run_id, b.run_id);
        let mut other = Config::default();
        other.paths.seed = 8;
        assert_ne!(a.run_id, RunManifest::new(&other).run_id);
    }

    #[test]
    fn config_change_refreshes_identity_but_keeps_stage_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let config = Config::default();
        let mut m = RunManifest::new(&config);
        m.record_stage("ingest", BTreeMap::new(), BTreeMap::new(), now_unix());
        m.save(&path).unwrap();

        let same = RunManifest::load_or_new(&path, &config);
        assert!(same.stages.contains_key("ingest"));

        let mut changed = config.clone();
        changed.corpus.domain = "sports".into();
        let reloaded = RunManifest::load_or_new(&path, &changed);
        assert_ne!(reloaded.run_id, same.run_id);
        assert!(reloaded.stages.contains_key("ingest"));
    }

    #[test]
    fn staleness_is_detected_by_input_hash_mismatch() {
        let mut m = RunManifest::new(&Config::default());
        let inputs = BTreeMap::from([("claims.jsonl".to_string(), "aaaa".to_string())]);
        m.record_stage("triples", inputs.clone(), BTreeMap::new(), now_unix());
        assert!(m.up_to_date("triples", &inputs));
        let stale = BTreeMap::from([("claims.jsonl".to_string(), "bbbb".to_string())]);
        assert!(!m.up_to_date("triples", &stale));
        assert!(!m.up_to_date("graph", &inputs));
    }
}
