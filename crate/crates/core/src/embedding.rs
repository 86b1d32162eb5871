//! Semantic vectors, embedding backends and semantic distance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm_gateway;

pub const DEFAULT_DIMENSION: usize = 768;

/// Dense embedding of a text. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SemanticVector(Vec<f64>);

impl SemanticVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("semantic vector is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "semantic vector entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for SemanticVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<SemanticVector> for Vec<f64> {
    fn from(v: SemanticVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance metric {other:?} (expected euclidean or cosine)"
            ))),
        }
    }
}

/// Distance between two embeddings; smaller is more similar.
///
/// Cosine distance is `1 - cos` clamped to `[0, 2]`, and `1.0` when either
/// vector has zero norm.
pub fn semantic_distance(a: &SemanticVector, b: &SemanticVector, metric: DistanceMetric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(match metric {
        DistanceMetric::Euclidean => a
            .0
            .iter()
            .zip(&b.0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Cosine => {
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
                (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
            }
        }
    })
}

#[async_trait]
pub trait Embedder: Send + Sync {
    /// Length of every vector this backend returns.
    fn dimension(&self) -> usize;

    /// One vector per input, in input order.
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>>;
}

#[async_trait]
impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>> {
        (**self).embed_batch(texts).await
    }
}

pub async fn embed(text: &str, embedder: &dyn Embedder) -> Result<SemanticVector> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("cannot embed empty text".into()));
    }
    let mut out = llm_gateway::embed_batch(&[text.to_owned()], embedder).await?;
    Ok(out.remove(0))
}

/// Offline embedder: signed feature hashing of character 1- to 3-grams,
/// L2-normalized.
///
/// Deterministic across runs and platforms. Word boundaries are marked so
/// that short strings with the same characters in different order map to
/// different vectors.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a followed by the murmur3 64-bit finalizer, so every output bit
/// depends on every input byte.
fn feature_hash(bytes: &[u8]) -> u64 {
    let mut h = bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME));
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn embed_text(&self, text: &str) -> SemanticVector {
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(text.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut values = vec![0.0f64; self.dimension];
        let mut buf = String::new();
        for n in 1..=3usize {
            for window in chars.windows(n) {
                buf.clear();
                buf.push(char::from(b'0' + n as u8));
                buf.extend(window);
                let h = feature_hash(buf.as_bytes());
                let bucket = (h % self.dimension as u64) as usize;
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                let magnitude = 1.0 + ((h >> 32) & 0xff) as f64 / 256.0;
                values[bucket] += sign * magnitude;
            }
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        SemanticVector(values)
    }
}

#[async_trait]
impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<SemanticVector>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}
