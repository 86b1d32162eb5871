//! Emotion-aware memory retrieval for role-playing agents.
//!
//! Memory fragments carry a semantic embedding and an eight-dimension
//! emotion vector. Queries are encoded the same way, and one of five
//! strategies fuses the two distances into a ranking. The retrieved
//! fragments ground the generation prompt of a role-playing agent, whose
//! personality fidelity can then be measured with questionnaires.

pub mod config;
pub mod embedding;
pub mod emotion;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod llm_gateway;
pub mod memory_store;
pub mod prompts;
pub mod retrieval;

pub use config::EngineConfig;
pub use embedding::{semantic_distance, DistanceMetric, Embedder, HashingEmbedder, SemanticVector};
pub use emotion::{emotion_distance, parse_emotion_response, score_emotion, Emotion, EmotionScorer, EmotionVector};
pub use engine::{Engine, EngineParts, Response};
pub use error::{Error, Result};
pub use evaluation::{
    compare_strategies, compute_metrics, AssessmentResult, ComparisonReport, Instrument, Metrics, PersonalityLabel,
    Questionnaire,
};
pub use memory_store::{CharacterProfile, MemoryFragment, MemoryUnit, ProfileCatalog};
pub use retrieval::{retrieve, Query, RetrievalStrategy, ScoredFragment, StrategyKind};
