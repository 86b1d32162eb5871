use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limiter::{ConcurrencyLimiter, GatewayStats};
use super::{ChatBackend, ChatRequest};
use crate::embedding::{Embedder, SemanticVector};
use crate::error::{Error, Result};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "EMOMEM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Maximum in-flight requests.
    pub concurrency: usize,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    /// Minimum spacing between request starts; 0 disables.
    pub min_interval_ms: u64,
    /// Declared embedding dimension (embedding backends only).
    pub dimension: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            concurrency: 4,
            backoff_initial_ms: 500,
            backoff_max_ms: 8_000,
            min_interval_ms: 0,
            dimension: 768,
        }
    }
}

/// Client for an OpenAI-compatible server. Implements both [`ChatBackend`]
/// and [`Embedder`].
pub struct OpenAiClient {
    http: reqwest::Client,
    config: HttpBackendConfig,
    api_key: Option<String>,
    limiter: ConcurrencyLimiter,
}

enum Attempt {
    Done(Value),
    Retry(Error),
}

impl OpenAiClient {
    pub fn new(config: HttpBackendConfig, api_key: Option<String>) -> Result<Self> {
        if config.endpoint.trim().is_empty() {
            return Err(Error::InvalidConfig("backend endpoint is empty".into()));
        }
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig("timeout_secs must be positive".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(format!("building HTTP client: {e}")))?;
        let limiter = ConcurrencyLimiter::new(config.concurrency)
            .with_min_interval(Some(Duration::from_millis(config.min_interval_ms)));
        Ok(Self {
            http,
            config,
            api_key: api_key.filter(|k| !k.is_empty()),
            limiter,
        })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: HttpBackendConfig) -> Result<Self> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        self.limiter.stats()
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        let ms = self
            .config
            .backoff_initial_ms
            .saturating_mul(factor)
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    async fn attempt(&self, url: &str, body: &Value) -> Result<Attempt> {
        let _permit = self.limiter.acquire().await;
        let mut builder = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Ok(Attempt::Retry(Error::Timeout { attempts: 0 })),
            Err(e) => return Ok(Attempt::Retry(Error::Backend(format!("transport: {e}")))),
        };
        let status = response.status();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Ok(Attempt::Retry(Error::Timeout { attempts: 0 })),
            Err(e) => return Ok(Attempt::Retry(Error::Backend(format!("reading body: {e}")))),
        };

        if status.is_success() {
            return serde_json::from_str(&text)
                .map(Attempt::Done)
                .map_err(|e| Error::Backend(format!("invalid JSON response: {e}")));
        }
        let message = error_message(&text);
        if let Some(index) = error_index(&text) {
            return Err(Error::BatchItem { index, message });
        }
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(Error::Auth {
                status: status.as_u16(),
                message,
            }),
            s if s == StatusCode::TOO_MANY_REQUESTS || s.is_server_error() => Ok(Attempt::Retry(
                Error::Backend(format!("HTTP {}: {message}", s.as_u16())),
            )),
            s => Err(Error::Backend(format!("HTTP {}: {message}", s.as_u16()))),
        }
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value> {
        let url = self.url(path);
        let mut retry = 0;
        loop {
            match self.attempt(&url, &body).await? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(err) if retry < self.config.max_retries => {
                    let wait = self.backoff(retry);
                    retry += 1;
                    self.limiter.record_retry();
                    tracing::warn!(%url, retry, ?wait, %err, "retrying backend request");
                    tokio::time::sleep(wait).await;
                }
                Attempt::Retry(Error::Timeout { .. }) => {
                    return Err(Error::Timeout {
                        attempts: retry + 1,
                    })
                }
                Attempt::Retry(err) => {
                    return Err(Error::Backend(format!(
                        "giving up after {} attempt(s): {err}",
                        retry + 1
                    )))
                }
            }
        }
    }

    fn model_for<'a>(&'a self, requested: &'a str) -> &'a str {
        if requested.is_empty() {
            &self.config.model
        } else {
            requested
        }
    }
}

fn error_message(body: &str) -> String {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => v
            .pointer("/error/message")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| body.chars().take(500).collect()),
        Err(_) => body.chars().take(500).collect(),
    }
}

fn error_index(body: &str) -> Option<usize> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/error/index")?.as_u64().map(|i| i as usize)
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

#[async_trait]
impl ChatBackend for OpenAiClient {
    async fn chat(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let body = json!({
            "model": self.model_for(&request.model),
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = self.post("chat/completions", body).await?;
        let completion: ChatCompletion = serde_json::from_value(value)
            .map_err(|e| Error::Backend(format!("unexpected chat response shape: {e}")))?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend("chat response has no content".into()))
    }
}

#[async_trait]
impl Embedder for OpenAiClient {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>> {
        let body = json!({
            "model": self.config.model,
            "input": texts,
        });
        let value = self.post("embeddings", body).await?;
        let mut response: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| Error::Backend(format!("unexpected embedding response shape: {e}")))?;
        response.data.sort_by_key(|d| d.index);
        for (expected, item) in response.data.iter().enumerate() {
            if item.index != expected {
                return Err(Error::BatchItem {
                    index: expected,
                    message: "no embedding returned for this input".into(),
                });
            }
        }
        if response.data.len() != texts.len() {
            return Err(Error::BatchItem {
                index: response.data.len(),
                message: "no embedding returned for this input".into(),
            });
        }
        response
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.config.dimension {
                    return Err(Error::Dimension {
                        expected: self.config.dimension,
                        actual: item.embedding.len(),
                    });
                }
                SemanticVector::new(item.embedding)
            })
            .collect()
    }
}
