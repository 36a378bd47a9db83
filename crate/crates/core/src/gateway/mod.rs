//! Model gateway: prompt rendering, transparent response caching, retries
//! with exponential backoff, and pluggable chat/embedding providers. Every
//! model call in the pipeline goes through here, so a warm cache makes the
//! whole pipeline reproducible with the provider offline.

mod cache;
pub mod mock;
mod openai;
mod templates;

pub use cache::{CachedEntry, PromptCache};
pub use mock::{MockChatProvider, MockEmbeddingProvider};
pub use openai::OpenAiProvider;
pub use templates::{render, template, PromptTemplate, RenderedPrompt, TemplateName};

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::hashing::sha_hex;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("template {template} has unbound placeholder {{{placeholder}}}")]
    UnboundPlaceholder {
        template: &'static str,
        placeholder: String,
    },
    #[error("provider call failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider refused the request: {message}")]
    Refusal { message: String },
    #[error("provider returned an unusable response: {message}")]
    InvalidResponse { message: String },
    #[error("cache I/O failed: {0}")]
    Cache(#[from] std::io::Error),
    #[error("API key environment variable {var} is not set")]
    MissingApiKey { var: String },
}

/// How a single provider call failed; drives the retry decision.
#[derive(Debug)]
pub enum ProviderFailure {
    /// Worth retrying: timeouts, connection errors, 429/5xx responses.
    Transient(String),
    /// Not worth retrying: bad request, auth failure, local logic error.
    Fatal(String),
    /// The model declined to produce usable content.
    Refusal(String),
}

/// One fully-rendered chat call. Providers only need `system`/`user` plus the
/// sampling settings; the template name and bindings ride along so offline
/// providers can apply per-template rules without re-parsing prompt text.
pub struct ChatCall<'a> {
    pub template: Option<TemplateName>,
    pub vars: Option<&'a BTreeMap<String, String>>,
    pub system: &'a str,
    pub user: &'a str,
    pub model: &'a str,
    pub temperature: f64,
    pub seed: u64,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, call: &ChatCall) -> Result<String, ProviderFailure>;
    /// Stable identifier recorded in run manifests.
    fn id(&self) -> String;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Returns one vector per input text. Vectors need not be normalized;
    /// the gateway normalizes before returning them to callers.
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, ProviderFailure>;
    fn id(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub template: TemplateName,
    pub vars: BTreeMap<String, String>,
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

pub struct GatewayOptions {
    pub chat_model: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub seed: u64,
    pub retry: RetryPolicy,
    /// Minimum spacing between provider calls; zero disables rate limiting.
    pub min_request_interval: Duration,
    pub concurrency: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            chat_model: "mock-chat".into(),
            embedding_model: "mock-embed".into(),
            temperature: 0.0,
            seed: 7,
            retry: RetryPolicy::default(),
            min_request_interval: Duration::ZERO,
            concurrency: 1,
        }
    }
}

pub struct Gateway {
    chat: Box<dyn ChatProvider>,
    embedder: Box<dyn EmbeddingProvider>,
    cache: Option<PromptCache>,
    opts: GatewayOptions,
    last_call: Mutex<Option<Instant>>,
}

impl Gateway {
    pub fn new(
        chat: Box<dyn ChatProvider>,
        embedder: Box<dyn EmbeddingProvider>,
        cache: Option<PromptCache>,
        opts: GatewayOptions,
    ) -> Self {
        Gateway {
            chat,
            embedder,
            cache,
            opts,
            last_call: Mutex::new(None),
        }
    }

    pub fn chat_model(&self) -> &str {
        &self.opts.chat_model
    }

    pub fn embedding_model(&self) -> &str {
        &self.opts.embedding_model
    }

    pub fn seed(&self) -> u64 {
        self.opts.seed
    }

    pub fn provider_ids(&self) -> (String, String) {
        (self.chat.id(), self.embedder.id())
    }

    fn chat_cache_key(&self, system: &str, user: &str) -> String {
        sha_hex(format!(
            "chat\u{1}{}\u{1}{:?}\u{1}{}\u{1}{system}\u{1}{user}",
            self.opts.chat_model, self.opts.temperature, self.opts.seed
        ))
    }

    fn embed_cache_key(&self, text: &str) -> String {
        sha_hex(format!(
            "embed\u{1}{}\u{1}{text}",
            self.opts.embedding_model
        ))
    }

    fn pace(&self) {
        if self.opts.min_request_interval.is_zero() {
            return;
        }
        let mut last = self.last_call.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.opts.min_request_interval {
                std::thread::sleep(self.opts.min_request_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderFailure>,
    ) -> Result<T, GatewayError> {
        let attempts = self.opts.retry.max_attempts.max(1);
        let mut last_message = String::new();
        for attempt in 1..=attempts {
            self.pace();
            match call() {
                Ok(v) => return Ok(v),
                Err(ProviderFailure::Refusal(message)) => {
                    return Err(GatewayError::Refusal { message })
                }
                Err(ProviderFailure::Fatal(message)) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(ProviderFailure::Transient(message)) => {
                    log::warn!("transient provider failure (attempt {attempt}/{attempts}): {message}");
                    last_message = message;
                    if attempt < attempts {
                        let backoff = self.opts.retry.base_delay * 2u32.pow(attempt - 1);
                        if !backoff.is_zero() {
                            std::thread::sleep(backoff);
                        }
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last_message,
        })
    }

    /// Renders `template` with `vars` and completes it, consulting the cache
    /// first. Identical requests always return identical text.
    pub fn complete(
        &self,
        template: TemplateName,
        vars: &BTreeMap<String, String>,
    ) -> Result<ModelResponse, GatewayError> {
        let rendered = render(template, vars)?;
        self.complete_rendered(Some(template), Some(vars), &rendered.system, &rendered.user)
    }

    /// Completion for prompts that are not part of the template registry
    /// (e.g. auxiliary classifiers). Same caching and retry behavior.
    pub fn complete_text(&self, system: &str, user: &str) -> Result<ModelResponse, GatewayError> {
        self.complete_rendered(None, None, system, user)
    }

    fn complete_rendered(
        &self,
        template: Option<TemplateName>,
        vars: Option<&BTreeMap<String, String>>,
        system: &str,
        user: &str,
    ) -> Result<ModelResponse, GatewayError> {
        let key = self.chat_cache_key(system, user);
        if let Some(cache) = &self.cache {
            if let Some(CachedEntry::Chat { text }) = cache.get(&key) {
                return Ok(ModelResponse {
                    text,
                    cache_hit: true,
                });
            }
        }
        let call = ChatCall {
            template,
            vars,
            system,
            user,
            model: &self.opts.chat_model,
            temperature: self.opts.temperature,
            seed: self.opts.seed,
        };
        let text = self.with_retries(|| self.chat.complete(&call))?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &CachedEntry::Chat { text: text.clone() })?;
        }
        Ok(ModelResponse {
            text,
            cache_hit: false,
        })
    }

    /// Embeds texts, consulting the per-text cache. Returned vectors are
    /// L2-normalized. An empty input yields an empty output.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        if let Some(cache) = &self.cache {
            for (i, text) in texts.iter().enumerate() {
                if let Some(CachedEntry::Embedding { vector }) =
                    cache.get(&self.embed_cache_key(text))
                {
                    out[i] = Some(vector);
                } else {
                    missing.push(i);
                }
            }
        } else {
            missing = (0..texts.len()).collect();
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors =
                self.with_retries(|| self.embedder.embed(&batch, &self.opts.embedding_model))?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::InvalidResponse {
                    message: format!(
                        "embedding provider returned {} vectors for {} texts",
                        vectors.len(),
                        batch.len()
                    ),
                });
            }
            for (&i, vector) in missing.iter().zip(vectors) {
                let normed = l2_normalize(vector).ok_or_else(|| GatewayError::InvalidResponse {
                    message: format!("zero-norm embedding for text index {i}"),
                })?;
                if let Some(cache) = &self.cache {
                    cache.put(
                        &self.embed_cache_key(&texts[i]),
                        &CachedEntry::Embedding {
                            vector: normed.clone(),
                        },
                    )?;
                }
                out[i] = Some(normed);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("all slots filled")).collect())
    }

    /// Embeds in bounded batches. With `concurrency > 1`, batches run on a
    /// small thread pool and results are merged back in input order, so the
    /// output is identical to the sequential run.
    pub fn embed_batched(
        &self,
        texts: &[String],
        batch_size: usize,
    ) -> Result<Vec<Vec<f64>>, GatewayError> {
        let batch_size = batch_size.max(1);
        let batches: Vec<&[String]> = texts.chunks(batch_size).collect();
        let workers = self.opts.concurrency.max(1).min(batches.len().max(1));
        if workers <= 1 || batches.len() <= 1 {
            let mut out = Vec::with_capacity(texts.len());
            for b in batches {
                out.extend(self.embed(b)?);
            }
            return Ok(out);
        }
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>, GatewayError>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.embed(batches[i]);
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            out.extend(slot.into_inner().unwrap().expect("worker filled slot")?);
        }
        Ok(out)
    }
}

fn l2_normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 || !norm.is_finite() {
        return None;
    }
    for x in &mut v {
        *x /= norm;
    }
    Some(v)
}
