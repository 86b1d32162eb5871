//! Mood-congruent memory retrieval.
//!
//! Every fragment gets a semantic distance (embedding metric, Euclidean by
//! default) and an emotional distance (`1 - cos` of emotion vectors) to
//! the query. The strategy fuses the two into a final score and the `k`
//! fragments with the smallest final score are returned:
//!
//! | strategy        | final score                                   |
//! |-----------------|-----------------------------------------------|
//! | `semantic-only` | semantic distance                             |
//! | `c-a`           | `w * s' + (1 - w) * e'`                       |
//! | `c-m`           | `(s' + eps) * (e' + eps)`                     |
//! | `s-s`           | shortlist `pool` by semantic, rank by emotion |
//! | `s-e`           | shortlist `pool` by emotion, rank by semantic |
//!
//! `s'` and `e'` are min-max normalized over the unit (0 when every
//! distance in a family is equal); raw mode skips normalization. Ties
//! always break on ascending fragment id.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed, semantic_distance, DistanceMetric, Embedder, SemanticVector};
use crate::emotion::{emotion_distance, EmotionScorer, EmotionVector};
use crate::error::{Error, Result};
use crate::memory_store::MemoryUnit;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_WEIGHT: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Sequential strategies shortlist `POOL_FACTOR * k` fragments by default.
pub const POOL_FACTOR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "semantic-only")]
    SemanticOnly,
    #[serde(rename = "c-a")]
    CombineAdd,
    #[serde(rename = "c-m")]
    CombineMul,
    #[serde(rename = "s-s")]
    SeqSemanticFirst,
    #[serde(rename = "s-e")]
    SeqEmotionFirst,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::SemanticOnly,
        StrategyKind::CombineAdd,
        StrategyKind::CombineMul,
        StrategyKind::SeqSemanticFirst,
        StrategyKind::SeqEmotionFirst,
    ];

    /// Flag / wire name.
    pub fn code(self) -> &'static str {
        match self {
            StrategyKind::SemanticOnly => "semantic-only",
            StrategyKind::CombineAdd => "c-a",
            StrategyKind::CombineMul => "c-m",
            StrategyKind::SeqSemanticFirst => "s-s",
            StrategyKind::SeqEmotionFirst => "s-e",
        }
    }

    /// Row label used in comparison reports.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::SemanticOnly => "Ordinary RAG",
            StrategyKind::CombineAdd => "Emotional RAG (C-A)",
            StrategyKind::CombineMul => "Emotional RAG (C-M)",
            StrategyKind::SeqSemanticFirst => "Emotional RAG (S-S)",
            StrategyKind::SeqEmotionFirst => "Emotional RAG (S-E)",
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, StrategyKind::SeqSemanticFirst | StrategyKind::SeqEmotionFirst)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.code() == lower)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy {s:?} (expected one of semantic-only, c-a, c-m, s-s, s-e)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalStrategy {
    #[serde(rename = "strategy")]
    pub kind: StrategyKind,
    /// Semantic weight for `c-a`.
    pub weight: f64,
    /// Shortlist size for sequential strategies; `None` means `3 * k`.
    pub pool_size: Option<usize>,
    /// Shift applied to both factors in `c-m`.
    pub epsilon: f64,
    /// Min-max normalize each distance family before fusion.
    pub normalize: bool,
    pub metric: DistanceMetric,
}

impl Default for RetrievalStrategy {
    fn default() -> Self {
        Self::new(StrategyKind::CombineAdd)
    }
}

impl RetrievalStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            weight: DEFAULT_WEIGHT,
            pool_size: None,
            epsilon: DEFAULT_EPSILON,
            normalize: true,
            metric: DistanceMetric::Euclidean,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = Some(pool_size);
        self
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn raw(mut self) -> Self {
        self.normalize = false;
        self
    }

    pub fn pool_size_for(&self, k: usize) -> usize {
        self.pool_size.unwrap_or(POOL_FACTOR * k)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidConfig(format!(
                "weight must be in [0, 1], got {}",
                self.weight
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if let Some(pool) = self.pool_size {
            if pool < k {
                return Err(Error::InvalidConfig(format!(
                    "pool_size {pool} is smaller than k {k}"
                )));
            }
        }
        Ok(())
    }
}

/// An encoded query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub semantic: SemanticVector,
    pub emotion: EmotionVector,
}

/// Embeds and emotion-scores `text`. Both must succeed.
pub async fn encode_query(text: &str, embedder: &dyn Embedder, scorer: &EmotionScorer) -> Result<Query> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("query text is empty".into()));
    }
    let (semantic, emotion) = futures::try_join!(embed(text, embedder), scorer.score(text))?;
    Ok(Query {
        text: text.to_owned(),
        semantic,
        emotion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFragment {
    pub fragment_id: String,
    /// Raw semantic distance to the query.
    pub semantic_score: f64,
    /// Raw emotional distance to the query.
    pub emotional_score: f64,
    /// Score the ranking was made on, per the active strategy.
    pub final_score: f64,
}

pub fn combine_add(s_norm: f64, e_norm: f64, weight: f64) -> f64 {
    weight * s_norm + (1.0 - weight) * e_norm
}

pub fn combine_mul(s_norm: f64, e_norm: f64, epsilon: f64) -> f64 {
    (s_norm + epsilon) * (e_norm + epsilon)
}

/// Min-max scales to `[0, 1]`; a constant family maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    // Also catches NaN spans.
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / span).collect()
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Indices of `ids` sorted by ascending `score`, ties by id.
fn rank(ids: &[&str], score: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.collect();
    order.sort_by(|&a, &b| by_score_then_id((score[a], ids[a]), (score[b], ids[b])));
    order
}

fn two_stage(ids: &[&str], primary: &[f64], secondary: &[f64], pool_size: usize, k: usize) -> Vec<usize> {
    let mut pool = rank(ids, primary, 0..ids.len());
    pool.truncate(pool_size);
    let mut out = rank(ids, secondary, pool.into_iter());
    out.truncate(k);
    out
}

/// Shortlists the `pool_size` ids with the smallest primary distance, then
/// returns the first `k` of that shortlist ordered by secondary distance.
pub fn sequential_rerank(
    primary: &HashMap<String, f64>,
    secondary: &HashMap<String, f64>,
    pool_size: usize,
    k: usize,
) -> Result<Vec<String>> {
    if pool_size < k {
        return Err(Error::InvalidConfig(format!(
            "pool_size {pool_size} is smaller than k {k}"
        )));
    }
    let mut ids: Vec<&str> = primary.keys().map(String::as_str).collect();
    ids.sort_unstable();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !secondary.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() || secondary.len() != primary.len() {
        return Err(Error::InvalidInput(format!(
            "score maps cover different fragments (missing secondary for: {})",
            missing.join(", ")
        )));
    }
    let p: Vec<f64> = ids.iter().map(|id| primary[*id]).collect();
    let s: Vec<f64> = ids.iter().map(|id| secondary[*id]).collect();
    Ok(two_stage(&ids, &p, &s, pool_size, k)
        .into_iter()
        .map(|i| ids[i].to_owned())
        .collect())
}

/// Returns the `min(k, n)` best fragments by ascending final score.
pub fn retrieve(query: &Query, unit: &MemoryUnit, strategy: &RetrievalStrategy, k: usize) -> Result<Vec<ScoredFragment>> {
    strategy.validate(k)?;
    let uncached = unit.uncached_ids();
    if !uncached.is_empty() {
        return Err(Error::UncachedVector(uncached));
    }

    let n = unit.len();
    let mut ids = Vec::with_capacity(n);
    let mut sem = Vec::with_capacity(n);
    let mut emo = Vec::with_capacity(n);
    for fragment in unit {
        let (Some(semantic), Some(emotion)) = (&fragment.semantic, &fragment.emotion) else {
            unreachable!("checked above");
        };
        ids.push(fragment.id.as_str());
        sem.push(semantic_distance(&query.semantic, semantic, strategy.metric)?);
        emo.push(emotion_distance(&query.emotion, emotion));
    }

    let (sem_in, emo_in) = if strategy.normalize {
        (min_max_normalize(&sem), min_max_normalize(&emo))
    } else {
        (sem.clone(), emo.clone())
    };

    let (order, final_scores): (Vec<usize>, Vec<f64>) = match strategy.kind {
        StrategyKind::SemanticOnly => {
            let mut order = rank(&ids, &sem, 0..n);
            order.truncate(k);
            (order, sem.clone())
        }
        StrategyKind::CombineAdd | StrategyKind::CombineMul => {
            let fused: Vec<f64> = sem_in
                .iter()
                .zip(&emo_in)
                .map(|(&s, &e)| match strategy.kind {
                    StrategyKind::CombineAdd => combine_add(s, e, strategy.weight),
                    _ => combine_mul(s, e, strategy.epsilon),
                })
                .collect();
            let mut order = rank(&ids, &fused, 0..n);
            order.truncate(k);
            (order, fused)
        }
        StrategyKind::SeqSemanticFirst => (
            two_stage(&ids, &sem, &emo, strategy.pool_size_for(k), k),
            emo.clone(),
        ),
        StrategyKind::SeqEmotionFirst => (
            two_stage(&ids, &emo, &sem, strategy.pool_size_for(k), k),
            sem.clone(),
        ),
    };

    Ok(order
        .into_iter()
        .map(|i| ScoredFragment {
            fragment_id: ids[i].to_owned(),
            semantic_score: sem[i],
            emotional_score: emo[i],
            final_score: final_scores[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::llm_gateway::{ChatParams, MockChatBackend};
    use crate::memory_store::MemoryFragment;
    use crate::prompts::builtin;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn frag(id: &str, semantic: &[f64], emotion: [u8; 8]) -> MemoryFragment {
        MemoryFragment::new(id, "c", format!("text of {id}"))
            .unwrap()
            .with_vectors(
                SemanticVector::new(semantic.to_vec()).unwrap(),
                EmotionVector::new(emotion).unwrap(),
            )
    }

    fn query(semantic: &[f64], emotion: [u8; 8]) -> Query {
        Query {
            text: "q".into(),
            semantic: SemanticVector::new(semantic.to_vec()).unwrap(),
            emotion: EmotionVector::new(emotion).unwrap(),
        }
    }

    fn ids(results: &[ScoredFragment]) -> Vec<&str> {
        results.iter().map(|r| r.fragment_id.as_str()).collect()
    }

    #[test]
    fn combine_add_examples() {
        assert_eq!(combine_add(0.0, 0.0, 0.5), 0.0);
        assert_eq!(combine_add(1.0, 0.0, 0.5), 0.5);
        assert_eq!(combine_add(0.25, 0.75, 0.5), 0.5);
    }

    #[test]
    fn combine_mul_examples() {
        assert!((combine_mul(0.0, 0.0, 0.01) - 0.0001).abs() < 1e-15);
        assert!((combine_mul(1.0, 1.0, 0.01) - 1.0201).abs() < 1e-15);
    }

    #[test]
    fn combine_mul_ordering_matches_product_table() {
        // Hand-computed with eps = 0.01:
        //   A (0.0, 1.0) -> 0.01 * 1.01 = 0.0101
        //   B (0.5, 0.5) -> 0.51 * 0.51 = 0.2601
        //   C (0.2, 0.9) -> 0.21 * 0.91 = 0.1911
        //   D (1.0, 0.1) -> 1.01 * 0.11 = 0.1111
        let pairs = [("A", 0.0, 1.0), ("B", 0.5, 0.5), ("C", 0.2, 0.9), ("D", 1.0, 0.1)];
        let table = [0.0101, 0.2601, 0.1911, 0.1111];
        for ((_, s, e), expected) in pairs.iter().zip(table) {
            assert!((combine_mul(*s, *e, 0.01) - expected).abs() < 1e-12);
        }
        let mut ranked: Vec<_> = pairs.iter().map(|(id, s, e)| (combine_mul(*s, *e, 0.01), *id)).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let order: Vec<_> = ranked.into_iter().map(|(_, id)| id).collect();
        assert_eq!(order, ["A", "D", "C", "B"]);
    }

    #[test]
    fn normalization_edge_cases() {
        assert_eq!(min_max_normalize(&[]), Vec::<f64>::new());
        assert_eq!(min_max_normalize(&[3.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in StrategyKind::ALL {
            assert_eq!(kind.code().parse::<StrategyKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.code()));
        }
        assert_eq!(StrategyKind::SemanticOnly.label(), "Ordinary RAG");
        assert!("s-x".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn strategy_validation() {
        let s = RetrievalStrategy::new(StrategyKind::SeqSemanticFirst);
        assert_eq!(s.pool_size_for(10), 30);
        assert!(s.validate(0).is_err());
        assert!(s.with_pool_size(5).validate(10).is_err());
        assert!(s.with_pool_size(10).validate(10).is_ok());
        assert!(RetrievalStrategy::default().with_weight(1.5).validate(1).is_err());
    }

    /// Five fragments, 2-d semantic vectors, query at the origin with
    /// emotion (9,1,1,1,1,1,1,1). Expected order from the brute-force
    /// script in `tests/oracles/combine_add_five.py`.
    #[test]
    fn combine_add_handcrafted_five() {
        let unit = MemoryUnit::new(vec![
            frag("f1", &[1.0, 0.0], [1, 1, 1, 1, 9, 1, 1, 1]),
            frag("f2", &[2.0, 0.0], [9, 1, 1, 1, 1, 1, 1, 1]),
            frag("f3", &[0.0, 3.0], [8, 2, 1, 1, 1, 1, 1, 1]),
            frag("f4", &[0.5, 0.5], [1, 1, 9, 1, 1, 1, 1, 1]),
            frag("f5", &[4.0, 0.0], [9, 2, 1, 1, 1, 1, 1, 1]),
        ])
        .unwrap();
        let q = query(&[0.0, 0.0], [9, 1, 1, 1, 1, 1, 1, 1]);
        let strategy = RetrievalStrategy::new(StrategyKind::CombineAdd).with_weight(0.5);
        let out = retrieve(&q, &unit, &strategy, 3).unwrap();
        assert_eq!(ids(&out), ["f2", "f3", "f4"]);
        let expected = [0.19631569153635178, 0.35409564976033764, 0.5];
        for (r, e) in out.iter().zip(expected) {
            assert!((r.final_score - e).abs() < 1e-12, "{} vs {e}", r.final_score);
        }
    }

    /// Six fragments, pool 4, k 2; expected ids from the exhaustive
    /// two-stage sort in `tests/oracles/sequential_six.py`.
    #[test]
    fn sequential_handcrafted_six() {
        let primary: HashMap<String, f64> = [("a", 0.1), ("b", 0.2), ("c", 0.3), ("d", 0.4), ("e", 0.5), ("f", 0.6)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let secondary: HashMap<String, f64> = [("a", 0.9), ("b", 0.5), ("c", 0.7), ("d", 0.2), ("e", 0.0), ("f", 0.1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(sequential_rerank(&primary, &secondary, 4, 2).unwrap(), ["d", "b"]);
        // pool = k keeps the primary top-k set
        assert_eq!(sequential_rerank(&primary, &secondary, 2, 2).unwrap(), ["b", "a"]);
        // pool = n is secondary-only
        assert_eq!(sequential_rerank(&primary, &secondary, 6, 2).unwrap(), ["e", "f"]);
        assert!(sequential_rerank(&primary, &secondary, 1, 2).is_err());
        let mut partial = secondary.clone();
        partial.remove("f");
        assert!(sequential_rerank(&primary, &partial, 4, 2).is_err());
    }

    #[test]
    fn exact_duplicate_ranks_first_for_semantic_only() {
        let e = HashingEmbedder::new(32);
        let texts = ["the dragon attacked", "we had tea", "I lost my keys", "the dragon is asleep"];
        let fragments: Vec<_> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                MemoryFragment::new(format!("f{i}"), "c", *t)
                    .unwrap()
                    .with_vectors(e.embed_text(t), EmotionVector::uniform(((i % 9) + 1) as u8).unwrap())
            })
            .collect();
        let unit = MemoryUnit::new(fragments).unwrap();
        let q = Query {
            text: "I lost my keys".into(),
            semantic: e.embed_text("I lost my keys"),
            emotion: EmotionVector::new([9, 1, 1, 1, 1, 1, 1, 1]).unwrap(),
        };
        let out = retrieve(&q, &unit, &RetrievalStrategy::new(StrategyKind::SemanticOnly), 2).unwrap();
        assert_eq!(out[0].fragment_id, "f2");
        assert_eq!(out[0].semantic_score, 0.0);
    }

    #[test]
    fn uncached_fragments_are_reported() {
        let unit = MemoryUnit::new(vec![
            frag("ok", &[0.0], [1; 8]),
            MemoryFragment::new("bare1", "c", "x").unwrap(),
            MemoryFragment::new("bare2", "c", "y").unwrap(),
        ])
        .unwrap();
        match retrieve(&query(&[0.0], [1; 8]), &unit, &RetrievalStrategy::default(), 10) {
            Err(Error::UncachedVector(ids)) => assert_eq!(ids, ["bare1", "bare2"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_unit_gives_empty_results() {
        let out = retrieve(&query(&[0.0], [1; 8]), &MemoryUnit::default(), &RetrievalStrategy::default(), 10).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn dimension_mismatch_propagates() {
        let unit = MemoryUnit::new(vec![frag("a", &[0.0, 1.0], [1; 8])]).unwrap();
        let err = retrieve(&query(&[0.0], [1; 8]), &unit, &RetrievalStrategy::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn ties_break_on_id() {
        let unit = MemoryUnit::new(vec![
            frag("b", &[1.0], [2; 8]),
            frag("a", &[1.0], [2; 8]),
            frag("c", &[1.0], [2; 8]),
        ])
        .unwrap();
        for kind in StrategyKind::ALL {
            let out = retrieve(&query(&[0.0], [3; 8]), &unit, &RetrievalStrategy::new(kind), 3).unwrap();
            assert_eq!(ids(&out), ["a", "b", "c"], "{kind}");
        }
    }

    #[tokio::test]
    async fn encode_query_is_atomic() {
        let e = HashingEmbedder::new(8);
        let template = builtin("emotion_scoring", "en").unwrap();
        let down = EmotionScorer::new(Arc::new(MockChatBackend::failing("down")), template.clone(), ChatParams::default()).unwrap();
        assert!(encode_query("hello", &e, &down).await.is_err());

        let up = EmotionScorer::new(Arc::new(MockChatBackend::emotion_scorer()), template, ChatParams::default()).unwrap();
        assert!(matches!(encode_query("", &e, &up).await, Err(Error::InvalidInput(_))));
        let a = encode_query("hello there", &e, &up).await.unwrap();
        let b = encode_query("hello there", &e, &up).await.unwrap();
        assert_eq!(a, b);
    }

    /// Rank position (0-based) of `target` under C-A over normalized pairs.
    fn rank_position(pairs: &[(f64, f64)], target: usize, weight: f64) -> usize {
        let ids: Vec<String> = (0..pairs.len()).map(|i| format!("{i:03}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let fused: Vec<f64> = pairs.iter().map(|&(s, e)| combine_add(s, e, weight)).collect();
        rank(&ids, &fused, 0..pairs.len()).iter().position(|&i| i == target).unwrap()
    }

    proptest! {
        #[test]
        fn combine_add_is_monotone(
            pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..20),
            target in 0usize..20,
            bump in 0.0f64..1.0,
            bump_semantic in any::<bool>(),
            weight in 0.0f64..=1.0,
        ) {
            let target = target % pairs.len();
            let before = rank_position(&pairs, target, weight);
            let mut worse = pairs.clone();
            if bump_semantic {
                worse[target].0 = (worse[target].0 + bump).min(1.0);
            } else {
                worse[target].1 = (worse[target].1 + bump).min(1.0);
            }
            prop_assert!(rank_position(&worse, target, weight) >= before);
        }
    }
}
