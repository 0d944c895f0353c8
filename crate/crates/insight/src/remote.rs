//! HTTP clients for real models: an OpenAI-style chat completion backend and
//! an embeddings endpoint.

use std::time::Duration;

use insight_core::embedding::{EmbedError, Embedder, EmbedderConfig, EmbeddingVector};
use insight_core::gateway::{DecodingParams, GenerationError, Generator};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const API_KEY_ENV: &str = "INSIGHT_LLM_API_KEY";
pub const DEFAULT_CHAT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Name of the environment variable holding the bearer key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_CHAT_TIMEOUT.as_millis() as u64
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}

pub struct HttpChatBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, GenerationError> {
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(GenerationError::Config("endpoint and model are required".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self { config, api_key, client })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

fn transport(status: Option<u16>, detail: impl ToString) -> GenerationError {
    GenerationError::Transport { status, detail: detail.to_string() }
}

impl Generator for HttpChatBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, GenerationError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "seed": params.seed,
            "max_tokens": params.max_tokens,
        });
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| transport(e.status().map(|s| s.as_u16()), e))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(transport(Some(status.as_u16()), text.chars().take(200).collect::<String>()));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| GenerationError::Contract(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GenerationError::Contract("response has no choices[0].message.content".into()))
    }
}

/// Client for an embeddings endpoint taking `{model, input: [..]}` and
/// answering `{data: [{embedding: [..]}, ..]}`.
pub struct HttpEmbedder {
    config: EmbedderConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("external embedder needs an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self { config, endpoint, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or_else(|| EmbedError::Contract("empty response".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.config.model_name, "input": texts });
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Transport(format!("status {}", resp.status().as_u16())));
        }
        let parsed: EmbeddingResponse = resp.json().map_err(|e| EmbedError::Contract(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Contract(format!("asked for {} embeddings, got {}", texts.len(), parsed.data.len())));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dim {
                    return Err(EmbedError::Dimension { expected: self.config.dim, got: d.embedding.len() });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}
