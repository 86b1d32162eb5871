use std::collections::BTreeMap;
use std::fmt::Write as _;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{assess, compute_metrics, Dimension, Instrument, Metrics, PersonalityLabel, Questionnaire};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::memory_store::{CharacterProfile, MemoryUnit};
use crate::retrieval::{RetrievalStrategy, StrategyKind};

/// Questionnaire items answered concurrently per character.
const ITEM_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub item_id: String,
    pub dimension: Dimension,
    pub question: String,
    pub reply: Option<String>,
    pub retrieved_ids: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub character_id: String,
    pub strategy: StrategyKind,
    pub instrument: Instrument,
    /// In questionnaire order.
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn failed_items(&self) -> usize {
        self.entries.iter().filter(|e| e.reply.is_none()).count()
    }
}

/// A character under evaluation with its memory and ground truth.
#[derive(Debug, Clone)]
pub struct CharacterCase {
    pub profile: CharacterProfile,
    pub unit: MemoryUnit,
    pub label: Option<PersonalityLabel>,
}

impl CharacterCase {
    /// Takes the label from the profile when it has one.
    pub fn new(profile: CharacterProfile, unit: MemoryUnit) -> Self {
        let label = profile.labels.clone();
        Self { profile, unit, label }
    }

    pub fn with_label(mut self, label: PersonalityLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn id(&self) -> &str {
        &self.profile.character_id
    }
}

/// Poses every questionnaire item to the character, retrieving memories
/// with `strategy`. Item failures are recorded and do not stop the run.
pub async fn administer(
    engine: &Engine,
    case: &CharacterCase,
    questionnaire: &Questionnaire,
    strategy: &RetrievalStrategy,
    k: usize,
) -> Transcript {
    let entries = stream::iter(&questionnaire.items)
        .map(|item| async move {
            let (reply, retrieved_ids, error) =
                match engine.respond(&case.profile, &case.unit, &item.text, strategy, k).await {
                    Ok(r) => (
                        Some(r.reply),
                        r.retrieved.into_iter().map(|s| s.fragment_id).collect(),
                        None,
                    ),
                    Err(err) => {
                        tracing::warn!(character = case.id(), item = %item.id, %err, "item failed");
                        (None, Vec::new(), Some(err.to_string()))
                    }
                };
            TranscriptEntry {
                item_id: item.id.clone(),
                dimension: item.dimension,
                question: item.text.clone(),
                reply,
                retrieved_ids,
                error,
            }
        })
        .buffered(ITEM_CONCURRENCY)
        .collect()
        .await;
    Transcript {
        character_id: case.id().to_owned(),
        strategy: strategy.kind,
        instrument: questionnaire.instrument,
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: StrategyKind,
    pub method: String,
    /// `None` when no character could be fully assessed.
    pub metrics: Option<Metrics>,
    pub failed_items: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub instrument: Instrument,
    pub rows: Vec<ComparisonRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ComparisonReport {
    pub const HEADER: [&'static str; 9] = [
        "strategy",
        "method",
        "acc_dim",
        "acc_full",
        "mse",
        "mae",
        "characters",
        "failed_items",
        "failures",
    ];

    fn records(&self) -> Vec<[String; 9]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.strategy.code().to_owned(),
                    r.method.clone(),
                    cell(r.metrics.map(|m| m.acc_dim)),
                    cell(r.metrics.map(|m| m.acc_full)),
                    cell(r.metrics.and_then(|m| m.mse)),
                    cell(r.metrics.and_then(|m| m.mae)),
                    r.metrics.map_or(0, |m| m.characters).to_string(),
                    r.failed_items.to_string(),
                    r.failures.join(" | "),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        writer.write_record(Self::HEADER).map_err(csv_err)?;
        for record in self.records() {
            writer.write_record(&record).map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }

    /// Aligned plain-text table; failure notes follow the table.
    pub fn to_table(&self) -> String {
        let records = self.records();
        let shown = Self::HEADER.len() - 1;
        let mut widths: Vec<usize> = Self::HEADER[..shown].iter().map(|h| h.len()).collect();
        for r in &records {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let row: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", row.join("  ").trim_end());
        };
        line(Self::HEADER[..shown].to_vec(), &mut out);
        let rules: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(rules.iter().map(String::as_str).collect(), &mut out);
        for r in &records {
            line(r[..shown].iter().map(String::as_str).collect(), &mut out);
        }
        for row in self.rows.iter().filter(|r| !r.failures.is_empty()) {
            let _ = writeln!(out, "\n{} failures:", row.strategy.code());
            for f in &row.failures {
                let _ = writeln!(out, "  {f}");
            }
        }
        out
    }
}

/// Runs the full questionnaire, judging and scoring pipeline for each
/// strategy over the same characters.
pub async fn compare_strategies(
    engine: &Engine,
    cases: &[CharacterCase],
    questionnaire: &Questionnaire,
    strategies: &[RetrievalStrategy],
    k: usize,
) -> Result<ComparisonReport> {
    let instrument = questionnaire.instrument;
    if strategies.is_empty() {
        return Err(Error::InvalidInput("no strategies to compare".into()));
    }
    for s in strategies {
        s.validate(k)?;
    }
    let uncached: Vec<String> = cases.iter().flat_map(|c| c.unit.uncached_ids()).collect();
    if !uncached.is_empty() {
        return Err(Error::UncachedVector(uncached));
    }
    let unlabeled: Vec<String> = cases
        .iter()
        .filter(|c| c.label.as_ref().and_then(|l| l.letters(instrument)).is_none())
        .map(|c| c.id().to_owned())
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::MissingLabel(unlabeled));
    }
    let labels: BTreeMap<String, PersonalityLabel> = cases
        .iter()
        .filter_map(|c| c.label.clone().map(|l| (c.id().to_owned(), l)))
        .collect();

    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut results = BTreeMap::new();
        let mut failures = Vec::new();
        let mut failed_items = 0;
        for case in cases {
            let transcript = administer(engine, case, questionnaire, strategy, k).await;
            failed_items += transcript.failed_items();
            let assessment = assess(&transcript, &case.profile.name, engine.judge()).await;
            match assessment.result() {
                Ok(r) => {
                    results.insert(case.id().to_owned(), r);
                }
                Err(err) => failures.push(format!("{}: {err}", case.id())),
            }
        }
        let metrics = if results.is_empty() {
            failures.push("no character could be assessed".into());
            None
        } else {
            Some(compute_metrics(&results, &labels, instrument)?)
        };
        rows.push(ComparisonRow {
            strategy: strategy.kind,
            method: strategy.kind.label().to_owned(),
            metrics,
            failed_items,
            failures,
        });
    }
    Ok(ComparisonReport { instrument, rows })
}
