//! Personality-fidelity evaluation: questionnaires, judging and metrics.

mod judge;
mod metrics;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory_store::read_jsonl;

pub use judge::{assess, parse_judge_score, Assessment, DimensionJudgement, PersonalityJudge};
pub use metrics::{compute_metrics, Metrics};
pub use run::{
    administer, compare_strategies, CharacterCase, ComparisonReport, ComparisonRow, Transcript, TranscriptEntry,
};

/// Scores at or above this resolve to the first pole of an axis.
pub const LETTER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Instrument {
    Mbti,
    Bfi,
}

impl Instrument {
    pub fn dimensions(self) -> &'static [Dimension] {
        match self {
            Instrument::Mbti => &Dimension::MBTI,
            Instrument::Bfi => &Dimension::BFI,
        }
    }

    pub fn parse_dimension(self, raw: &str) -> Result<Dimension> {
        let cleaned: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        let found = self.dimensions().iter().copied().find(|d| {
            let (a, b) = d.letters();
            match self {
                Instrument::Mbti => cleaned == format!("{a}{b}") || cleaned == format!("{b}{a}"),
                Instrument::Bfi => {
                    cleaned == d.code() || cleaned == d.name().to_ascii_uppercase()
                }
            }
        });
        found.ok_or_else(|| Error::Parse(format!("{raw:?} is not a {self} dimension")))
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Instrument::Mbti => "MBTI",
            Instrument::Bfi => "BFI",
        })
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MBTI" => Ok(Instrument::Mbti),
            "BFI" | "BIG5" | "BIGFIVE" => Ok(Instrument::Bfi),
            other => Err(Error::InvalidConfig(format!("unknown instrument {other:?}"))),
        }
    }
}

/// One scored axis of an instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "E/I")]
    ExtraversionIntroversion,
    #[serde(rename = "S/N")]
    SensingIntuition,
    #[serde(rename = "T/F")]
    ThinkingFeeling,
    #[serde(rename = "J/P")]
    JudgingPerceiving,
    #[serde(rename = "O")]
    Openness,
    #[serde(rename = "C")]
    Conscientiousness,
    #[serde(rename = "E")]
    Extraversion,
    #[serde(rename = "A")]
    Agreeableness,
    #[serde(rename = "N")]
    Neuroticism,
}

impl Dimension {
    pub const MBTI: [Dimension; 4] = [
        Dimension::ExtraversionIntroversion,
        Dimension::SensingIntuition,
        Dimension::ThinkingFeeling,
        Dimension::JudgingPerceiving,
    ];

    pub const BFI: [Dimension; 5] = [
        Dimension::Openness,
        Dimension::Conscientiousness,
        Dimension::Extraversion,
        Dimension::Agreeableness,
        Dimension::Neuroticism,
    ];

    pub fn instrument(self) -> Instrument {
        if Self::MBTI.contains(&self) {
            Instrument::Mbti
        } else {
            Instrument::Bfi
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Dimension::ExtraversionIntroversion => "E/I",
            Dimension::SensingIntuition => "S/N",
            Dimension::ThinkingFeeling => "T/F",
            Dimension::JudgingPerceiving => "J/P",
            Dimension::Openness => "O",
            Dimension::Conscientiousness => "C",
            Dimension::Extraversion => "E",
            Dimension::Agreeableness => "A",
            Dimension::Neuroticism => "N",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::ExtraversionIntroversion => "Extraversion vs. Introversion",
            Dimension::SensingIntuition => "Sensing vs. Intuition",
            Dimension::ThinkingFeeling => "Thinking vs. Feeling",
            Dimension::JudgingPerceiving => "Judging vs. Perceiving",
            Dimension::Openness => "Openness",
            Dimension::Conscientiousness => "Conscientiousness",
            Dimension::Extraversion => "Extraversion",
            Dimension::Agreeableness => "Agreeableness",
            Dimension::Neuroticism => "Neuroticism",
        }
    }

    /// Categorical letters; the first is the pole a score of 1 points to.
    /// Big Five axes use `H`igh / `L`ow.
    pub fn letters(self) -> (char, char) {
        match self {
            Dimension::ExtraversionIntroversion => ('E', 'I'),
            Dimension::SensingIntuition => ('S', 'N'),
            Dimension::ThinkingFeeling => ('T', 'F'),
            Dimension::JudgingPerceiving => ('J', 'P'),
            _ => ('H', 'L'),
        }
    }

    /// Human-readable pole descriptions for prompts.
    pub fn poles(self) -> (String, String) {
        match self {
            Dimension::ExtraversionIntroversion => ("Extraversion (E)".into(), "Introversion (I)".into()),
            Dimension::SensingIntuition => ("Sensing (S)".into(), "Intuition (N)".into()),
            Dimension::ThinkingFeeling => ("Thinking (T)".into(), "Feeling (F)".into()),
            Dimension::JudgingPerceiving => ("Judging (J)".into(), "Perceiving (P)".into()),
            other => (format!("high {}", other.name()), format!("low {}", other.name())),
        }
    }

    /// Letter for a score toward the first pole; 0.5 resolves to the first.
    pub fn letter_for(self, score: f64) -> char {
        let (first, second) = self.letters();
        if score >= LETTER_THRESHOLD {
            first
        } else {
            second
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

fn check_unit_interval(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidInput(format!("{what} value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Ground-truth personality label. Scores are proportions toward the first
/// pole of each axis (MBTI in E/I, S/N, T/F, J/P order; BFI in O, C, E, A,
/// N order).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonalityLabel {
    #[serde(default)]
    pub mbti_type: Option<String>,
    #[serde(default)]
    pub mbti_scores: Option<[f64; 4]>,
    #[serde(default)]
    pub bfi_scores: Option<[f64; 5]>,
}

impl PersonalityLabel {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.mbti_type {
            let letters: Vec<char> = t.chars().map(|c| c.to_ascii_uppercase()).collect();
            let ok = letters.len() == 4
                && Dimension::MBTI.iter().zip(&letters).all(|(d, c)| {
                    let (a, b) = d.letters();
                    *c == a || *c == b
                });
            if !ok {
                return Err(Error::InvalidInput(format!("invalid MBTI type {t:?}")));
            }
        }
        if let Some(s) = &self.mbti_scores {
            check_unit_interval("mbti_scores", s)?;
        }
        if let Some(s) = &self.bfi_scores {
            check_unit_interval("bfi_scores", s)?;
        }
        Ok(())
    }

    /// Categorical letters per dimension. For MBTI the type string wins
    /// over scores when both are present.
    pub fn letters(&self, instrument: Instrument) -> Option<Vec<char>> {
        match instrument {
            Instrument::Mbti => {
                if let Some(t) = &self.mbti_type {
                    return Some(t.chars().map(|c| c.to_ascii_uppercase()).collect());
                }
                self.mbti_scores.map(|s| {
                    Dimension::MBTI.iter().zip(s).map(|(d, v)| d.letter_for(v)).collect()
                })
            }
            Instrument::Bfi => self
                .bfi_scores
                .map(|s| Dimension::BFI.iter().zip(s).map(|(d, v)| d.letter_for(v)).collect()),
        }
    }

    pub fn scores(&self, instrument: Instrument) -> Option<Vec<f64>> {
        match instrument {
            Instrument::Mbti => self.mbti_scores.map(|s| s.to_vec()),
            Instrument::Bfi => self.bfi_scores.map(|s| s.to_vec()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct LabelRecord {
    character_id: String,
    #[serde(flatten)]
    label: PersonalityLabel,
}

/// Labels file: JSONL of `{character_id, mbti_type, mbti_scores, bfi_scores}`.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, PersonalityLabel>> {
    let mut out = BTreeMap::new();
    for (line, record) in read_jsonl::<LabelRecord>(path)? {
        record.label.validate().map_err(|e| Error::Format {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        })?;
        if out.insert(record.character_id.clone(), record.label).is_some() {
            return Err(Error::DuplicateId {
                id: record.character_id,
                line,
            });
        }
    }
    Ok(out)
}

/// Predicted per-dimension scores toward each axis's first pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResult {
    pub instrument: Instrument,
    pub scores: Vec<f64>,
}

impl AssessmentResult {
    pub fn new(instrument: Instrument, scores: Vec<f64>) -> Result<Self> {
        let expected = instrument.dimensions().len();
        if scores.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: scores.len(),
            });
        }
        check_unit_interval("assessment score", &scores)?;
        Ok(Self { instrument, scores })
    }

    pub fn letters(&self) -> Vec<char> {
        self.instrument
            .dimensions()
            .iter()
            .zip(&self.scores)
            .map(|(d, &s)| d.letter_for(s))
            .collect()
    }

    /// e.g. `INTJ`, or `HLHHL` for BFI.
    pub fn type_string(&self) -> String {
        self.letters().into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub id: String,
    pub text: String,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub instrument: Instrument,
    pub items: Vec<QuestionnaireItem>,
}

#[derive(Debug, Deserialize)]
struct ItemRecord {
    id: String,
    text: String,
    dimension: String,
    instrument: String,
}

impl Questionnaire {
    pub fn new(instrument: Instrument, items: Vec<QuestionnaireItem>) -> Result<Self> {
        for item in &items {
            if item.dimension.instrument() != instrument {
                return Err(Error::InvalidInput(format!(
                    "item {:?} has {} dimension {} in a {instrument} questionnaire",
                    item.id,
                    item.dimension.instrument(),
                    item.dimension
                )));
            }
        }
        Ok(Self { instrument, items })
    }

    /// Loads the items of `instrument` from a JSONL file of
    /// `{id, text, dimension, instrument}`. Items of other instruments are
    /// validated and skipped.
    pub fn load(path: &Path, instrument: Instrument) -> Result<Self> {
        let mut items = Vec::new();
        let mut seen = BTreeMap::new();
        for (line, record) in read_jsonl::<ItemRecord>(path)? {
            let fail = |e: Error| Error::Format {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            };
            let item_instrument: Instrument = record.instrument.parse().map_err(fail)?;
            let dimension = item_instrument.parse_dimension(&record.dimension).map_err(fail)?;
            if record.text.trim().is_empty() {
                return Err(fail(Error::InvalidInput(format!("item {:?} has empty text", record.id))));
            }
            if seen.insert(record.id.clone(), line).is_some() {
                return Err(Error::DuplicateId { id: record.id, line });
            }
            if item_instrument == instrument {
                items.push(QuestionnaireItem {
                    id: record.id,
                    text: record.text,
                    dimension,
                });
            }
        }
        Ok(Self { instrument, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
