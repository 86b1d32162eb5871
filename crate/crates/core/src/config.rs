//! TOML configuration for building an [`Engine`].
//!
//! ```toml
//! language = "en"
//! memory_dir = "memory"          # one <character_id>.jsonl per character
//! profiles = "profiles.jsonl"
//! templates = "templates"        # optional overlay of *.txt templates
//!
//! [embedder]
//! kind = "openai"                # openai | hashing
//! endpoint = "http://localhost:8000/v1"
//! model = "text-embedding-3-small"
//! dimension = 1536
//!
//! [scorer]                       # openai | mock
//! kind = "openai"
//! model = "gpt-4o-mini"
//!
//! [retrieval]
//! strategy = "c-a"
//! k = 10
//! ```
//!
//! Relative paths resolve against the config file's directory. The API
//! credential is read from `EMOMEM_API_KEY` only.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, HashingEmbedder};
use crate::emotion::EmotionScorer;
use crate::engine::{Engine, EngineParts};
use crate::error::{Error, Result};
use crate::evaluation::PersonalityJudge;
use crate::llm_gateway::{ChatBackend, ChatParams, HttpBackendConfig, MockChatBackend, OpenAiClient};
use crate::memory_store::{load_memory, load_profiles, MemoryUnit, ProfileCatalog};
use crate::prompts::{GenerationPromptBuilder, TemplateSet, DEFAULT_LANGUAGE};
use crate::retrieval::{RetrievalStrategy, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP server.
    #[default]
    OpenAi,
    /// Offline feature-hashing embedder (embedder only).
    Hashing,
    /// Deterministic hash-derived replies (chat roles only).
    Mock,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(flatten)]
    pub http: HttpBackendConfig,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl BackendSection {
    pub fn offline(kind: BackendKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    fn chat_params(&self) -> ChatParams {
        let defaults = ChatParams::default();
        ChatParams {
            model: self.http.model.clone(),
            temperature: self.temperature.unwrap_or(defaults.temperature),
            max_tokens: self.max_tokens.unwrap_or(defaults.max_tokens),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSection {
    #[serde(flatten)]
    pub strategy: RetrievalStrategy,
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            strategy: RetrievalStrategy::default(),
            k: DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub language: String,
    pub memory_dir: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub embedder: BackendSection,
    pub scorer: BackendSection,
    pub generator: BackendSection,
    pub judge: BackendSection,
    pub retrieval: RetrievalSection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            language: DEFAULT_LANGUAGE.into(),
            memory_dir: None,
            profiles: None,
            templates: None,
            embedder: BackendSection::default(),
            scorer: BackendSection::default(),
            generator: BackendSection::default(),
            judge: BackendSection::default(),
            retrieval: RetrievalSection::default(),
        }
    }
}

impl EngineConfig {
    /// Hashing embedder and mock chat roles; runs without network access.
    pub fn offline() -> Self {
        Self::default().into_offline()
    }

    /// Replaces every backend with its offline counterpart, keeping the
    /// embedding dimension.
    pub fn into_offline(self) -> Self {
        let mut embedder = BackendSection::offline(BackendKind::Hashing);
        embedder.http.dimension = self.embedder.http.dimension;
        Self {
            embedder,
            scorer: BackendSection::offline(BackendKind::Mock),
            generator: BackendSection::offline(BackendKind::Mock),
            judge: BackendSection::offline(BackendKind::Mock),
            ..self
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Parses, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.memory_dir, &mut config.profiles, &mut config.templates]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [
            ("memory_dir", &self.memory_dir),
            ("profiles", &self.profiles),
            ("templates", &self.templates),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::InvalidConfig(format!("{what} path {} does not exist", p.display())));
                }
            }
        }
        if self.embedder.kind == BackendKind::Mock {
            return Err(Error::InvalidConfig("embedder kind must be openai or hashing".into()));
        }
        for (role, s) in [("scorer", &self.scorer), ("generator", &self.generator), ("judge", &self.judge)] {
            if s.kind == BackendKind::Hashing {
                return Err(Error::InvalidConfig(format!("{role} kind must be openai or mock")));
            }
        }
        if self.embedder.http.dimension == 0 {
            return Err(Error::InvalidConfig("embedder dimension must be positive".into()));
        }
        self.retrieval.strategy.validate(self.retrieval.k)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates {
            Some(dir) => TemplateSet::load_dir(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn memory_path(&self, character_id: &str) -> Result<PathBuf> {
        let dir = self
            .memory_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("memory_dir is not configured".into()))?;
        if character_id.is_empty() || character_id.contains(['/', '\\']) || character_id.starts_with('.') {
            return Err(Error::InvalidInput(format!("invalid character id {character_id:?}")));
        }
        Ok(dir.join(format!("{character_id}.jsonl")))
    }

    pub fn load_memory(&self, character_id: &str) -> Result<MemoryUnit> {
        let path = self.memory_path(character_id)?;
        if !path.exists() {
            return Err(Error::UnknownCharacter(character_id.to_owned()));
        }
        load_memory(&path)
    }

    pub fn load_profiles(&self) -> Result<ProfileCatalog> {
        let path = self
            .profiles
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("profiles is not configured".into()))?;
        load_profiles(path)
    }

    pub fn build_engine(&self) -> Result<Engine> {
        let set = self.templates()?;
        let lang = self.language.as_str();
        let embedder: Arc<dyn Embedder> = match self.embedder.kind {
            BackendKind::Hashing => Arc::new(HashingEmbedder::new(self.embedder.http.dimension)),
            _ => Arc::new(OpenAiClient::from_env(self.embedder.http.clone())?),
        };
        let chat = |s: &BackendSection, mock: fn() -> MockChatBackend| -> Result<Arc<dyn ChatBackend>> {
            Ok(match s.kind {
                BackendKind::Mock => Arc::new(mock()),
                _ => Arc::new(OpenAiClient::from_env(s.http.clone())?),
            })
        };
        Engine::new(EngineParts {
            embedder,
            scorer: EmotionScorer::new(
                chat(&self.scorer, MockChatBackend::emotion_scorer)?,
                set.get("emotion_scoring", lang)?,
                self.scorer.chat_params(),
            )?,
            generator: chat(&self.generator, MockChatBackend::role_player)?,
            prompts: GenerationPromptBuilder::from_set(&set, lang, self.generator.chat_params())?,
            judge: PersonalityJudge::from_set(
                &set,
                lang,
                chat(&self.judge, MockChatBackend::judge)?,
                self.judge.chat_params(),
            )?,
            strategy: self.retrieval.strategy,
            k: self.retrieval.k,
        })
    }
}
