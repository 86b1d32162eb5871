//! Wires the embedder, scorers, generator and retrieval defaults together.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, HashingEmbedder};
use crate::emotion::EmotionScorer;
use crate::error::{Error, Result};
use crate::evaluation::PersonalityJudge;
use crate::llm_gateway::{ChatBackend, ChatParams, MockChatBackend};
use crate::memory_store::{precompute_vectors, CharacterProfile, MemoryFragment, MemoryUnit, PrecomputeReport};
use crate::prompts::{GenerationPromptBuilder, TemplateSet, DEFAULT_LANGUAGE};
use crate::retrieval::{encode_query, retrieve, Query, RetrievalStrategy, ScoredFragment, DEFAULT_K};

/// Everything an [`Engine`] is built from.
pub struct EngineParts {
    pub embedder: Arc<dyn Embedder>,
    pub scorer: EmotionScorer,
    pub generator: Arc<dyn ChatBackend>,
    pub prompts: GenerationPromptBuilder,
    pub judge: PersonalityJudge,
    pub strategy: RetrievalStrategy,
    pub k: usize,
}

/// A generated in-character reply and the memories it was grounded on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub reply: String,
    pub retrieved: Vec<ScoredFragment>,
}

pub struct Engine {
    embedder: Arc<dyn Embedder>,
    scorer: EmotionScorer,
    generator: Arc<dyn ChatBackend>,
    prompts: GenerationPromptBuilder,
    judge: PersonalityJudge,
    strategy: RetrievalStrategy,
    k: usize,
}

impl Engine {
    pub fn new(parts: EngineParts) -> Result<Self> {
        parts.strategy.validate(parts.k)?;
        Ok(Self {
            embedder: parts.embedder,
            scorer: parts.scorer,
            generator: parts.generator,
            prompts: parts.prompts,
            judge: parts.judge,
            strategy: parts.strategy,
            k: parts.k,
        })
    }

    /// Fully deterministic engine: hashing embedder and hash-derived mock
    /// chat models. Needs no network.
    pub fn offline(dimension: usize) -> Self {
        let set = TemplateSet::builtin();
        let params = ChatParams::default();
        let build = || -> Result<Self> {
            Self::new(EngineParts {
                embedder: Arc::new(HashingEmbedder::new(dimension)),
                scorer: EmotionScorer::new(
                    Arc::new(MockChatBackend::emotion_scorer()),
                    set.get("emotion_scoring", DEFAULT_LANGUAGE)?,
                    params.clone(),
                )?,
                generator: Arc::new(MockChatBackend::role_player()),
                prompts: GenerationPromptBuilder::from_set(&set, DEFAULT_LANGUAGE, params.clone())?,
                judge: PersonalityJudge::from_set(&set, DEFAULT_LANGUAGE, Arc::new(MockChatBackend::judge()), params.clone())?,
                strategy: RetrievalStrategy::default(),
                k: DEFAULT_K,
            })
        };
        build().expect("built-in templates are valid")
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn scorer(&self) -> &EmotionScorer {
        &self.scorer
    }

    pub fn judge(&self) -> &PersonalityJudge {
        &self.judge
    }

    pub fn prompts(&self) -> &GenerationPromptBuilder {
        &self.prompts
    }

    pub fn default_strategy(&self) -> &RetrievalStrategy {
        &self.strategy
    }

    pub fn default_k(&self) -> usize {
        self.k
    }

    pub async fn encode_query(&self, text: &str) -> Result<Query> {
        encode_query(text, self.embedder.as_ref(), &self.scorer).await
    }

    pub async fn retrieve(
        &self,
        unit: &MemoryUnit,
        text: &str,
        strategy: &RetrievalStrategy,
        k: usize,
    ) -> Result<Vec<ScoredFragment>> {
        strategy.validate(k)?;
        let uncached = unit.uncached_ids();
        if !uncached.is_empty() {
            return Err(Error::UncachedVector(uncached));
        }
        let query = self.encode_query(text).await?;
        retrieve(&query, unit, strategy, k)
    }

    /// Retrieves memories for `text` and generates the character's reply.
    pub async fn respond(
        &self,
        profile: &CharacterProfile,
        unit: &MemoryUnit,
        text: &str,
        strategy: &RetrievalStrategy,
        k: usize,
    ) -> Result<Response> {
        let retrieved = self.retrieve(unit, text, strategy, k).await?;
        let memories: Vec<MemoryFragment> = retrieved
            .iter()
            .filter_map(|s| unit.get(&s.fragment_id).cloned())
            .collect();
        let request = self.prompts.build_generation_prompt(profile, &memories, text)?;
        let reply = self.generator.chat(&request).await?;
        Ok(Response { reply, retrieved })
    }

    pub async fn precompute(&self, unit: &MemoryUnit, overwrite: bool) -> (MemoryUnit, PrecomputeReport) {
        precompute_vectors(unit, self.embedder.as_ref(), &self.scorer, overwrite).await
    }
}
