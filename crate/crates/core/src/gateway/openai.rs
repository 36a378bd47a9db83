//! OpenAI-compatible HTTP provider. Any service exposing `/chat/completions`
//! and `/embeddings` with the standard JSON shapes works by pointing
//! `base_url` at it. The API key is read from an environment variable and
//! never written to config files or manifests.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatCall, ChatProvider, EmbeddingProvider, GatewayError, ProviderFailure};

#[derive(Clone)]
pub struct OpenAiProvider {
    client: reqwest::blocking::Client,
    base_url: String,
}

impl OpenAiProvider {
    /// `api_key_env` names the environment variable holding the key.
    pub fn from_env(
        base_url: impl Into<String>,
        api_key_env: &str,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let api_key = std::env::var(api_key_env).map_err(|_| GatewayError::MissingApiKey {
            var: api_key_env.to_string(),
        })?;
        let mut headers = reqwest::header::HeaderMap::new();
        let mut auth = reqwest::header::HeaderValue::from_str(&format!("Bearer {api_key}"))
            .map_err(|_| GatewayError::MissingApiKey {
                var: api_key_env.to_string(),
            })?;
        auth.set_sensitive(true);
        headers.insert(reqwest::header::AUTHORIZATION, auth);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .default_headers(headers)
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: format!("failed to build HTTP client: {e}"),
            })?;
        Ok(OpenAiProvider {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, ProviderFailure> {
        let url = format!("{}{path}", self.base_url);
        let resp = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| ProviderFailure::Transient(format!("request to {url} failed: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderFailure::Transient(format!(
                "{url} returned {status}"
            )));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderFailure::Fatal(format!(
                "{url} returned {status}: {}",
                body.chars().take(300).collect::<String>()
            )));
        }
        resp.json()
            .map_err(|e| ProviderFailure::Transient(format!("invalid JSON from {url}: {e}")))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, call: &ChatCall) -> Result<String, ProviderFailure> {
        let body = json!({
            "model": call.model,
            "temperature": call.temperature,
            "seed": call.seed,
            "messages": [
                {"role": "system", "content": call.system},
                {"role": "user", "content": call.user},
            ],
        });
        let value = self.post("/chat/completions", body)?;
        let parsed: ChatCompletion = serde_json::from_value(value)
            .map_err(|e| ProviderFailure::Fatal(format!("unexpected completion shape: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderFailure::Refusal("completion had no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(ProviderFailure::Refusal("content filtered".into()));
        }
        match choice.message.content {
            Some(text) if !text.trim().is_empty() => Ok(text),
            // A blank claim-generation response is meaningful, so pass empty
            // strings through rather than treating them as refusals.
            Some(text) => Ok(text),
            None => Err(ProviderFailure::Refusal("completion had no content".into())),
        }
    }

    fn id(&self) -> String {
        format!("openai-compatible:{}", self.base_url)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for OpenAiProvider {
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        let body = json!({ "model": model, "input": texts });
        let value = self.post("/embeddings", body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| ProviderFailure::Fatal(format!("unexpected embedding shape: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderFailure::Fatal(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn id(&self) -> String {
        format!("openai-compatible:{}", self.base_url)
    }
}
