//! Chat-completion and embedding backends.
//!
//! Remote backends speak the OpenAI-compatible `/chat/completions` and
//! `/embeddings` JSON contract (see `docs/http.md`). Mock backends give
//! deterministic replies for offline runs and tests.

mod limiter;
mod mock;
mod openai;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, SemanticVector};
use crate::error::{Error, Result};

pub use limiter::{ConcurrencyLimiter, GatewayStats, Limited};
pub use mock::{prompt_hash, MockChatBackend, MockEmbedder};
pub use openai::{HttpBackendConfig, OpenAiClient, API_KEY_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Decoding parameters shared by every request a component sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatParams {
    /// Empty means "use the backend's configured model".
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            model: String::new(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, params: &ChatParams) -> Result<Self> {
        let request = Self {
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            model: params.model.clone(),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidInput("chat request has no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the last user message, or an empty string.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Returns the assistant's reply text.
    async fn chat(&self, request: &ChatRequest) -> Result<String>;
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    async fn chat(&self, request: &ChatRequest) -> Result<String> {
        (**self).chat(request).await
    }
}

/// Sends one request through `backend`.
pub async fn chat(request: &ChatRequest, backend: &dyn ChatBackend) -> Result<String> {
    request.validate()?;
    backend.chat(request).await
}

/// Embeds `texts` in one call, checking order-preserving length and the
/// backend's declared dimension.
pub async fn embed_batch(texts: &[String], backend: &dyn Embedder) -> Result<Vec<SemanticVector>> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("embedding batch is empty".into()));
    }
    if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidInput(format!(
            "embedding batch item {index} is empty"
        )));
    }
    let vectors = backend.embed_batch(texts).await?;
    if vectors.len() != texts.len() {
        return Err(Error::Backend(format!(
            "embedding backend returned {} vectors for {} inputs",
            vectors.len(),
            texts.len()
        )));
    }
    let expected = backend.dimension();
    if let Some(bad) = vectors.iter().find(|v| v.dim() != expected) {
        return Err(Error::Dimension {
            expected,
            actual: bad.dim(),
        });
    }
    Ok(vectors)
}
