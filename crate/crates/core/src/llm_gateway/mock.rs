//! Deterministic offline backends.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest};
use crate::embedding::{Embedder, HashingEmbedder, SemanticVector};
use crate::emotion::{Emotion, EmotionVector};
use crate::error::{Error, Result};

/// Hex SHA-256 of a prompt; the key for canned mock replies.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_bytes(prompt: &str) -> [u8; 32] {
    Sha256::digest(prompt.as_bytes()).into()
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String> + Send + Sync;

enum Responder {
    Fixed(String),
    Scripted(Mutex<VecDeque<Result<String>>>),
    Func(Box<ReplyFn>),
}

/// Chat backend whose replies are a pure function of the request.
///
/// Canned replies (keyed by [`prompt_hash`] of the last user message) take
/// precedence over the responder. `fail_when_contains` injects backend
/// errors for matching prompts.
pub struct MockChatBackend {
    responder: Responder,
    canned: HashMap<String, String>,
    fail_needles: Vec<String>,
    delay: Option<Duration>,
    calls: AtomicUsize,
    last: Mutex<Option<ChatRequest>>,
}

impl MockChatBackend {
    fn with_responder(responder: Responder) -> Self {
        Self {
            responder,
            canned: HashMap::new(),
            fail_needles: Vec::new(),
            delay: None,
            calls: AtomicUsize::new(0),
            last: Mutex::new(None),
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::with_responder(Responder::Fixed(reply.into()))
    }

    /// Replays `replies` in order; errors once exhausted.
    pub fn scripted(replies: Vec<Result<String>>) -> Self {
        Self::with_responder(Responder::Scripted(Mutex::new(replies.into())))
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static) -> Self {
        Self::with_responder(Responder::Func(Box::new(f)))
    }

    /// Always fails with a backend error carrying `message`.
    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        Self::from_fn(move |_| Err(Error::Backend(message.clone())))
    }

    /// Replies with a canonical emotion list derived from the prompt hash.
    pub fn emotion_scorer() -> Self {
        Self::from_fn(|req| {
            let bytes = digest_bytes(req.last_user_content());
            let mut values = [1u8; 8];
            for (v, b) in values.iter_mut().zip(bytes) {
                *v = 1 + b % 10;
            }
            Ok(EmotionVector::new(values)?.to_string())
        })
    }

    /// Replies with a two-decimal score in `[0, 1]` derived from the prompt hash.
    pub fn judge() -> Self {
        Self::from_fn(|req| {
            let bytes = digest_bytes(req.last_user_content());
            let raw = u16::from_be_bytes([bytes[0], bytes[1]]) % 101;
            Ok(format!("{:.2}", f64::from(raw) / 100.0))
        })
    }

    /// Replies in character with a short tag derived from the prompt hash.
    pub fn role_player() -> Self {
        Self::from_fn(|req| {
            let hash = prompt_hash(req.last_user_content());
            let bytes = digest_bytes(req.last_user_content());
            let mood = Emotion::ALL[bytes[0] as usize % 8];
            Ok(format!("[{mood}] reply {}", &hash[..12]))
        })
    }

    pub fn with_canned(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.canned.insert(prompt_hash(prompt), reply.into());
        self
    }

    pub fn fail_when_contains(mut self, needle: impl Into<String>) -> Self {
        self.fail_needles.push(needle.into());
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn last_request(&self) -> Option<ChatRequest> {
        self.last.lock().expect("mock lock poisoned").clone()
    }

    fn respond(&self, request: &ChatRequest) -> Result<String> {
        let prompt = request.last_user_content();
        if let Some(needle) = self.fail_needles.iter().find(|n| prompt.contains(n.as_str())) {
            return Err(Error::Backend(format!("mock failure for prompt containing {needle:?}")));
        }
        if let Some(reply) = self.canned.get(&prompt_hash(prompt)) {
            return Ok(reply.clone());
        }
        match &self.responder {
            Responder::Fixed(reply) => Ok(reply.clone()),
            Responder::Scripted(queue) => queue
                .lock()
                .expect("mock lock poisoned")
                .pop_front()
                .unwrap_or_else(|| Err(Error::Backend("mock script exhausted".into()))),
            Responder::Func(f) => f(request),
        }
    }
}

#[async_trait]
impl ChatBackend for MockChatBackend {
    async fn chat(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        *self.last.lock().expect("mock lock poisoned") = Some(request.clone());
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        self.respond(request)
    }
}

/// [`HashingEmbedder`] with call counting and failure injection.
pub struct MockEmbedder {
    inner: HashingEmbedder,
    fail_needles: Vec<String>,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            inner: HashingEmbedder::new(dimension),
            fail_needles: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn fail_on(mut self, needle: impl Into<String>) -> Self {
        self.fail_needles.push(needle.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        for (index, text) in texts.iter().enumerate() {
            if let Some(needle) = self.fail_needles.iter().find(|n| text.contains(n.as_str())) {
                return Err(Error::BatchItem {
                    index,
                    message: format!("mock failure for text containing {needle:?}"),
                });
            }
        }
        self.inner.embed_batch(texts).await
    }
}
