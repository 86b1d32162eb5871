use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::{Mutex, Semaphore, SemaphorePermit};
use tokio::time::Instant;

use super::{ChatBackend, ChatRequest};
use crate::embedding::{Embedder, SemanticVector};
use crate::error::Result;

/// Snapshot of a limiter's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub in_flight: usize,
    pub peak_in_flight: usize,
    pub requests: u64,
    pub retries: u64,
}

/// Bounds in-flight requests and optionally spaces request starts.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    semaphore: Semaphore,
    min_interval: Option<Duration>,
    next_start: Mutex<Option<Instant>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    requests: AtomicU64,
    retries: AtomicU64,
}

pub struct LimiterPermit<'a> {
    limiter: &'a ConcurrencyLimiter,
    _permit: SemaphorePermit<'a>,
}

impl Drop for LimiterPermit<'_> {
    fn drop(&mut self) {
        self.limiter.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl ConcurrencyLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            semaphore: Semaphore::new(max_in_flight.max(1)),
            min_interval: None,
            next_start: Mutex::new(None),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    /// Minimum spacing between consecutive request starts.
    pub fn with_min_interval(mut self, interval: Option<Duration>) -> Self {
        self.min_interval = interval.filter(|d| !d.is_zero());
        self
    }

    pub async fn acquire(&self) -> LimiterPermit<'_> {
        let permit = self
            .semaphore
            .acquire()
            .await
            .expect("limiter semaphore is never closed");
        if let Some(interval) = self.min_interval {
            let mut next = self.next_start.lock().await;
            let now = Instant::now();
            let start = next.map_or(now, |t| t.max(now));
            *next = Some(start + interval);
            drop(next);
            tokio::time::sleep_until(start).await;
        }
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(current, Ordering::SeqCst);
        self.requests.fetch_add(1, Ordering::SeqCst);
        LimiterPermit {
            limiter: self,
            _permit: permit,
        }
    }

    pub(crate) fn record_retry(&self) {
        self.retries.fetch_add(1, Ordering::SeqCst);
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            in_flight: self.in_flight.load(Ordering::SeqCst),
            peak_in_flight: self.peak.load(Ordering::SeqCst),
            requests: self.requests.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
        }
    }
}

/// Wraps any backend with a [`ConcurrencyLimiter`].
pub struct Limited<B> {
    inner: B,
    limiter: ConcurrencyLimiter,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self {
            inner,
            limiter: ConcurrencyLimiter::new(max_in_flight),
        }
    }

    pub fn stats(&self) -> GatewayStats {
        self.limiter.stats()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for Limited<B> {
    async fn chat(&self, request: &ChatRequest) -> Result<String> {
        let _permit = self.limiter.acquire().await;
        self.inner.chat(request).await
    }
}

#[async_trait]
impl<B: Embedder> Embedder for Limited<B> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>> {
        let _permit = self.limiter.acquire().await;
        self.inner.embed_batch(texts).await
    }
}
