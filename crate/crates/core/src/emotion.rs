//! Eight-dimensional Plutchik emotion vectors.
//!
//! Each text (query or stored memory fragment) is scored by a chat model on
//! the eight primary emotions, with integer intensities from 1 to 10. Two
//! emotional states are compared with cosine distance.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm_gateway::{ChatBackend, ChatMessage, ChatParams, ChatRequest};
use crate::prompts::PromptTemplate;

pub const MIN_INTENSITY: u8 = 1;
pub const MAX_INTENSITY: u8 = 10;

/// Re-prompts allowed after the first unparseable reply.
pub const DEFAULT_MAX_REPROMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Joy,
    Acceptance,
    Fear,
    Surprise,
    Sadness,
    Disgust,
    Anger,
    Anticipation,
}

impl Emotion {
    /// Canonical dimension order.
    pub const ALL: [Emotion; 8] = [
        Emotion::Joy,
        Emotion::Acceptance,
        Emotion::Fear,
        Emotion::Surprise,
        Emotion::Sadness,
        Emotion::Disgust,
        Emotion::Anger,
        Emotion::Anticipation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Acceptance => "acceptance",
            Emotion::Fear => "fear",
            Emotion::Surprise => "surprise",
            Emotion::Sadness => "sadness",
            Emotion::Disgust => "disgust",
            Emotion::Anger => "anger",
            Emotion::Anticipation => "anticipation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == lower)
            .ok_or_else(|| Error::Parse(format!("unknown emotion dimension {s:?}")))
    }
}

/// Intensities of the eight primary emotions, each an integer in `1..=10`.
///
/// Serialized as an 8-element integer array in [`Emotion::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct EmotionVector([u8; 8]);

impl EmotionVector {
    pub fn new(values: [u8; 8]) -> Result<Self> {
        for (emotion, v) in Emotion::ALL.iter().zip(values) {
            if !(MIN_INTENSITY..=MAX_INTENSITY).contains(&v) {
                return Err(Error::Parse(format!(
                    "{emotion} intensity {v} outside {MIN_INTENSITY}..={MAX_INTENSITY}"
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(value: u8) -> Result<Self> {
        Self::new([value; 8])
    }

    pub fn values(&self) -> [u8; 8] {
        self.0
    }

    pub fn get(&self, emotion: Emotion) -> u8 {
        self.0[emotion.index()]
    }

    /// The emotion with the highest intensity; earlier dimensions win ties.
    pub fn dominant(&self) -> Emotion {
        let mut best = Emotion::Joy;
        for e in Emotion::ALL {
            if self.get(e) > self.get(best) {
                best = e;
            }
        }
        best
    }
}

impl TryFrom<Vec<i64>> for EmotionVector {
    type Error = Error;

    fn try_from(raw: Vec<i64>) -> Result<Self> {
        if raw.len() != 8 {
            return Err(Error::Dimension {
                expected: 8,
                actual: raw.len(),
            });
        }
        let mut values = [0u8; 8];
        for (slot, v) in values.iter_mut().zip(&raw) {
            *slot = u8::try_from(*v)
                .map_err(|_| Error::Parse(format!("emotion intensity {v} out of range")))?;
        }
        Self::new(values)
    }
}

impl From<EmotionVector> for Vec<i64> {
    fn from(v: EmotionVector) -> Self {
        v.0.iter().map(|&x| i64::from(x)).collect()
    }
}

/// Canonical `name:value` list, e.g. `joy:9, acceptance:6, ...`.
impl fmt::Display for EmotionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in Emotion::ALL.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", e.name(), self.0[i])?;
        }
        Ok(())
    }
}

fn score_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(joy|acceptance|fear|surprise|sadness|disgust|anger|anticipation)\b[^\p{L}\p{N}]*?([+\-]?\d+(?:\.\d+)?)",
        )
        .expect("static regex")
    })
}

/// Extracts the eight `name: value` scores from a model reply.
///
/// Dimension names are matched case-insensitively and may be followed by any
/// run of punctuation or whitespace before the number. A name that is not
/// followed by a number (e.g. in surrounding prose) is ignored. Every
/// dimension must be scored exactly once with an integer in `1..=10`.
pub fn parse_emotion_response(raw: &str) -> Result<EmotionVector> {
    let mut slots: [Option<u8>; 8] = [None; 8];
    for cap in score_pattern().captures_iter(raw) {
        let emotion: Emotion = cap[1].parse()?;
        let number = &cap[2];
        let value: i64 = number.parse().map_err(|_| {
            Error::Parse(format!("{emotion} score {number:?} is not an integer"))
        })?;
        if !(i64::from(MIN_INTENSITY)..=i64::from(MAX_INTENSITY)).contains(&value) {
            return Err(Error::Parse(format!(
                "{emotion} score {value} outside {MIN_INTENSITY}..={MAX_INTENSITY}"
            )));
        }
        let slot = &mut slots[emotion.index()];
        if slot.is_some() {
            return Err(Error::Parse(format!("{emotion} scored more than once")));
        }
        *slot = Some(value as u8);
    }

    let missing: Vec<&str> = Emotion::ALL
        .iter()
        .filter(|e| slots[e.index()].is_none())
        .map(|e| e.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Parse(format!(
            "missing emotion scores: {}",
            missing.join(", ")
        )));
    }
    EmotionVector::new(slots.map(|s| s.unwrap_or_default()))
}

/// `1 - cos(a, b)`, in `[0, 2]`. Smaller means more emotionally congruent.
///
/// Intensities are positive, so `cos` is the square root of the exact integer
/// ratio `dot^2 / (|a|^2 |b|^2)`. Both rounding steps depend only on that
/// ratio, hence mathematically equal distances are bit-identical.
pub fn emotion_distance(a: &EmotionVector, b: &EmotionVector) -> f64 {
    let (mut dot, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.0.iter().zip(&b.0) {
        let (x, y) = (u64::from(x), u64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let cos = ((dot * dot) as f64 / (na * nb) as f64).sqrt();
    (1.0 - cos).clamp(0.0, 2.0)
}

/// Scores text on the eight emotions with a chat model.
#[derive(Clone)]
pub struct EmotionScorer {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
    params: ChatParams,
    max_reprompts: u32,
}

impl EmotionScorer {
    /// `template` must declare a `{text}` placeholder.
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        template: PromptTemplate,
        params: ChatParams,
    ) -> Result<Self> {
        template.require(&["text"])?;
        Ok(Self {
            backend,
            template,
            params,
            max_reprompts: DEFAULT_MAX_REPROMPTS,
        })
    }

    pub fn with_max_reprompts(mut self, max_reprompts: u32) -> Self {
        self.max_reprompts = max_reprompts;
        self
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub async fn score(&self, text: &str) -> Result<EmotionVector> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("cannot score empty text".into()));
        }
        let prompt = self.template.render_with(&[("text", text)])?;
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut attempt = 0;
        loop {
            let request = ChatRequest::new(messages.clone(), &self.params)?;
            let reply = self.backend.chat(&request).await?;
            match parse_emotion_response(&reply) {
                Ok(v) => return Ok(v),
                Err(err) if attempt < self.max_reprompts => {
                    tracing::debug!(attempt, %err, "re-prompting emotion scorer");
                    attempt += 1;
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(format!(
                        "Your answer could not be used ({err}). Reply with all eight scores \
                         as integers from 1 to 10, in the form: \
                         joy:_, acceptance:_, fear:_, surprise:_, sadness:_, disgust:_, anger:_, anticipation:_"
                    )));
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Alias for [`EmotionScorer::score`].
pub async fn score_emotion(text: &str, scorer: &EmotionScorer) -> Result<EmotionVector> {
    scorer.score(text).await
}
