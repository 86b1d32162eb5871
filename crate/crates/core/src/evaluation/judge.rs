use std::sync::{Arc, LazyLock};

use futures::future::join_all;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::run::{Transcript, TranscriptEntry};
use super::{AssessmentResult, Dimension, Instrument};
use crate::emotion::DEFAULT_MAX_REPROMPTS;
use crate::error::{Error, Result};
use crate::llm_gateway::{ChatBackend, ChatMessage, ChatParams, ChatRequest};
use crate::prompts::{PromptTemplate, TemplateSet};

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([+\-]?(?:\d+(?:\.\d*)?|\.\d+))\s*(%)?").expect("valid regex"));

/// First number in a judge reply, as a score in `[0, 1]`. A trailing `%`
/// scales by 1/100.
pub fn parse_judge_score(raw: &str) -> Result<f64> {
    let caps = NUMBER
        .captures(raw)
        .ok_or_else(|| Error::Parse(format!("no number in judge reply {raw:?}")))?;
    let mut value: f64 = caps[1]
        .parse()
        .map_err(|_| Error::Parse(format!("unreadable number {:?}", &caps[1])))?;
    if caps.get(2).is_some() {
        value /= 100.0;
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Parse(format!("judge score {value} outside [0, 1]")));
    }
    Ok(value)
}

/// Asks a chat model to place a character on one personality axis at a
/// time, given the character's questionnaire answers.
#[derive(Clone)]
pub struct PersonalityJudge {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
    params: ChatParams,
    max_reprompts: u32,
}

impl PersonalityJudge {
    pub const PLACEHOLDERS: [&'static str; 5] =
        ["character_name", "dimension", "first_pole", "second_pole", "transcript"];

    pub fn new(backend: Arc<dyn ChatBackend>, template: PromptTemplate, params: ChatParams) -> Result<Self> {
        template.require(&Self::PLACEHOLDERS)?;
        Ok(Self {
            backend,
            template,
            params,
            max_reprompts: DEFAULT_MAX_REPROMPTS,
        })
    }

    pub fn from_set(set: &TemplateSet, language: &str, backend: Arc<dyn ChatBackend>, params: ChatParams) -> Result<Self> {
        Self::new(backend, set.get("assessment", language)?, params)
    }

    pub fn with_max_reprompts(mut self, max_reprompts: u32) -> Self {
        self.max_reprompts = max_reprompts;
        self
    }

    pub fn render_prompt(&self, character_name: &str, dimension: Dimension, entries: &[&TranscriptEntry]) -> Result<String> {
        let answered: Vec<String> = entries
            .iter()
            .filter_map(|e| e.reply.as_ref().map(|r| (e, r)))
            .enumerate()
            .map(|(i, (e, r))| format!("Q{n}: {q}\nA{n}: {a}", n = i + 1, q = e.question, a = r.trim()))
            .collect();
        if answered.is_empty() {
            return Err(Error::InvalidInput(format!("no answered items for dimension {dimension}")));
        }
        let (first, second) = dimension.poles();
        self.template.render_with(&[
            ("character_name", character_name),
            ("dimension", dimension.name()),
            ("first_pole", first.as_str()),
            ("second_pole", second.as_str()),
            ("transcript", answered.join("\n\n").as_str()),
        ])
    }

    /// Score toward the first pole of `dimension`.
    pub async fn judge_dimension(
        &self,
        character_name: &str,
        dimension: Dimension,
        entries: &[&TranscriptEntry],
    ) -> Result<f64> {
        let prompt = self.render_prompt(character_name, dimension, entries)?;
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut attempt = 0;
        loop {
            let request = ChatRequest::new(messages.clone(), &self.params)?;
            let reply = self.backend.chat(&request).await?;
            match parse_judge_score(&reply) {
                Ok(v) => return Ok(v),
                Err(err) if attempt < self.max_reprompts => {
                    tracing::debug!(attempt, %err, %dimension, "re-prompting judge");
                    attempt += 1;
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(format!(
                        "Your answer could not be used ({err}). Reply with only a number between 0 and 1."
                    )));
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionJudgement {
    pub dimension: Dimension,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub character_id: String,
    pub instrument: Instrument,
    /// In the instrument's dimension order.
    pub judgements: Vec<DimensionJudgement>,
}

impl Assessment {
    pub fn failures(&self) -> impl Iterator<Item = &DimensionJudgement> {
        self.judgements.iter().filter(|j| j.score.is_none())
    }

    /// Complete result, or a parse error naming each failed dimension.
    pub fn result(&self) -> Result<AssessmentResult> {
        let failed: Vec<String> = self
            .failures()
            .map(|j| format!("{}: {}", j.dimension, j.error.as_deref().unwrap_or("no score")))
            .collect();
        if !failed.is_empty() {
            return Err(Error::Parse(format!(
                "assessment of {} incomplete ({})",
                self.character_id,
                failed.join("; ")
            )));
        }
        AssessmentResult::new(self.instrument, self.judgements.iter().filter_map(|j| j.score).collect())
    }
}

/// One judge call per dimension. Failures are recorded per dimension.
pub async fn assess(transcript: &Transcript, character_name: &str, judge: &PersonalityJudge) -> Assessment {
    let calls = transcript.instrument.dimensions().iter().map(|&dimension| {
        let entries: Vec<&TranscriptEntry> = transcript
            .entries
            .iter()
            .filter(|e| e.dimension == dimension)
            .collect();
        async move {
            match judge.judge_dimension(character_name, dimension, &entries).await {
                Ok(score) => DimensionJudgement {
                    dimension,
                    score: Some(score),
                    error: None,
                },
                Err(err) => DimensionJudgement {
                    dimension,
                    score: None,
                    error: Some(err.to_string()),
                },
            }
        }
    });
    Assessment {
        character_id: transcript.character_id.clone(),
        instrument: transcript.instrument,
        judgements: join_all(calls).await,
    }
}
