//! Run configuration: one TOML file with a section per concern. String
//! values may reference environment variables as ${NAME}, resolved at load
//! time so secrets stay out of the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkParams, MalformedPolicy};
use crate::difficulty::Aggregator;
use crate::gateway::{
    Gateway, GatewayOptions, MockChatProvider, MockEmbeddingProvider, OpenAiProvider,
    PromptCache, RetryPolicy,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config references undefined environment variable {0}")]
    MissingEnvVar(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot open prompt cache: {0}")]
    Cache(std::io::Error),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Input JSONL of articles; relative paths resolve against the config
    /// file's directory.
    pub input: String,
    pub domain: String,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub malformed: MalformedPolicy,
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub chunk_overlap: usize,
    pub tokenizer: String,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            input: String::new(),
            domain: "news".into(),
            min_tokens: 512,
            max_tokens: 8192,
            malformed: MalformedPolicy::Skip,
            chunk_min: 128,
            chunk_max: 256,
            chunk_overlap: 50,
            tokenizer: "whitespace-punct".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub seed: u64,
    pub retries: u32,
    /// Minimum milliseconds between provider calls; 0 disables limiting.
    pub rate_limit_ms: u64,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub embed_batch_size: usize,
    /// Cache directory for prompt/embedding responses; empty disables.
    pub cache_dir: String,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            chat_model: "mock-chat".into(),
            embedding_model: "mock-embed".into(),
            temperature: 0.0,
            seed: 7,
            retries: 3,
            rate_limit_ms: 0,
            timeout_secs: 60,
            concurrency: 1,
            embed_batch_size: 64,
            cache_dir: String::new(),
        }
    }
}

/// Component count: "auto" sizes from the data, otherwise a fixed count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentCount {
    Fixed(usize),
    Named(String),
}

impl ComponentCount {
    pub fn is_auto(&self) -> bool {
        matches!(self, ComponentCount::Named(s) if s == "auto")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: ComponentCount,
    pub tau: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Sweep candidate component counts and keep the best BIC.
    pub bic_sweep: bool,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            k: ComponentCount::Named("auto".into()),
            tau: 0.2,
            seed: 7,
            max_iters: 200,
            tol: 1e-6,
            bic_sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Sampled paths kept per hop count.
    pub per_hop: usize,
    pub seed: u64,
    /// Cap on shortest paths enumerated per (source, target) pair.
    pub pair_cap: usize,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            per_hop: 400,
            seed: 7,
            pair_cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultySection {
    /// "min", "mean", or "pmean:<p>".
    pub aggregator: String,
    /// Cut quartiles within each hop row rather than globally.
    pub per_hop: bool,
}

impl Default for DifficultySection {
    fn default() -> Self {
        DifficultySection {
            aggregator: "min".into(),
            per_hop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RagKind {
    Gateway,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    /// Label recorded as model_id; empty keeps the system's own id.
    pub model: String,
    pub rag: RagKind,
    /// argv for the subprocess adapter when rag = "subprocess".
    pub subprocess: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 10,
            model: String::new(),
            rag: RagKind::Gateway,
            subprocess: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Directory receiving every artifact and the run manifest; relative
    /// paths resolve against the config file's directory.
    pub workdir: String,
    pub corpus: CorpusSection,
    pub provider: ProviderSection,
    pub clustering: ClusteringSection,
    pub paths: PathsSection,
    pub difficulty: DifficultySection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workdir: "out".into(),
            corpus: CorpusSection::default(),
            provider: ProviderSection::default(),
            clustering: ClusteringSection::default(),
            paths: PathsSection::default(),
            difficulty: DifficultySection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Replaces every ${NAME} with the environment variable's value.
fn interpolate_env(text: &str) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("${") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find('}') {
            Some(close)
                if !after[..close].is_empty()
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
            {
                let name = &after[..close];
                let value = std::env::var(name)
                    .map_err(|_| ConfigError::MissingEnvVar(name.to_string()))?;
                out.push_str(&value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push_str("${");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let resolved = interpolate_env(text)?;
        let config: Config = toml::from_str(&resolved)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file. Relative `workdir` and `corpus.input` are
    /// rebased onto the file's directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Config::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            config.workdir = rebase(dir, &config.workdir);
            if !config.corpus.input.is_empty() {
                config.corpus.input = rebase(dir, &config.corpus.input);
            }
            if !config.provider.cache_dir.is_empty() {
                config.provider.cache_dir = rebase(dir, &config.provider.cache_dir);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.workdir.trim().is_empty() {
            return fail("workdir must not be empty".into());
        }
        if self.corpus.min_tokens > self.corpus.max_tokens {
            return fail(format!(
                "corpus.min_tokens {} exceeds corpus.max_tokens {}",
                self.corpus.min_tokens, self.corpus.max_tokens
            ));
        }
        if self.corpus.chunk_min > self.corpus.chunk_max {
            return fail("corpus.chunk_min exceeds corpus.chunk_max".into());
        }
        if self.corpus.chunk_overlap >= self.corpus.chunk_max {
            return fail("corpus.chunk_overlap must be smaller than corpus.chunk_max".into());
        }
        match &self.clustering.k {
            ComponentCount::Fixed(0) => return fail("clustering.k must be positive".into()),
            ComponentCount::Named(name) if name != "auto" => {
                return fail(format!(
                    "clustering.k must be \"auto\" or a positive integer, got {name:?}"
                ))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.clustering.tau) {
            return fail(format!(
                "clustering.tau must lie in [0, 1], got {}",
                self.clustering.tau
            ));
        }
        if self.paths.per_hop == 0 {
            return fail("paths.per_hop must be positive".into());
        }
        if self.paths.pair_cap == 0 {
            return fail("paths.pair_cap must be positive".into());
        }
        if let Err(e) = Aggregator::parse(&self.difficulty.aggregator) {
            return fail(e.to_string());
        }
        if self.eval.k == 0 {
            return fail("eval.k must be positive".into());
        }
        if self.eval.rag == RagKind::Subprocess && self.eval.subprocess.is_empty() {
            return fail("eval.rag = \"subprocess\" requires eval.subprocess argv".into());
        }
        Ok(())
    }

    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams {
            min_tokens: self.corpus.chunk_min,
            max_tokens: self.corpus.chunk_max,
            overlap: self.corpus.chunk_overlap,
        }
    }

    pub fn aggregator(&self) -> Aggregator {
        Aggregator::parse(&self.difficulty.aggregator).expect("validated at load")
    }

    /// Builds the provider gateway this config describes.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let p = &self.provider;
        let opts = GatewayOptions {
            chat_model: p.chat_model.clone(),
            embedding_model: p.embedding_model.clone(),
            temperature: p.temperature,
            seed: p.seed,
            retry: RetryPolicy {
                max_attempts: p.retries.max(1),
                base_delay: Duration::from_millis(250),
            },
            min_request_interval: Duration::from_millis(p.rate_limit_ms),
            concurrency: p.concurrency.max(1),
        };
        let cache = if p.cache_dir.is_empty() {
            None
        } else {
            Some(PromptCache::open(&p.cache_dir).map_err(ConfigError::Cache)?)
        };
        Ok(match p.kind {
            ProviderKind::Mock => Gateway::new(
                Box::new(MockChatProvider::new()),
                Box::new(MockEmbeddingProvider::default()),
                cache,
                opts,
            ),
            ProviderKind::Openai => {
                let timeout = Duration::from_secs(p.timeout_secs.max(1));
                let chat = OpenAiProvider::from_env(&p.base_url, &p.api_key_env, timeout)?;
                let embed = OpenAiProvider::from_env(&p.base_url, &p.api_key_env, timeout)?;
                Gateway::new(Box::new(chat), Box::new(embed), cache, opts)
            }
        })
    }
}

fn rebase(dir: &Path, value: &str) -> String {
    let p = Path::new(value);
    if p.is_absolute() {
        value.to_string()
    } else {
        dir.join(p).to_string_lossy().into_owned()
    }
}
