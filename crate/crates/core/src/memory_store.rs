//! Per-character memory units and character profiles, stored as JSONL.
//!
//! Memory file: one JSON object per line with keys `id`, `character_id`,
//! `text`, `semantic` (number array or null), `emotion` (8 integers or
//! null) and `source` (string or null). Blank lines are ignored.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed, Embedder, SemanticVector};
use crate::emotion::{EmotionScorer, EmotionVector};
use crate::error::{Error, Result};
use crate::evaluation::PersonalityLabel;

/// Fragments encoded concurrently during precompute; the gateway applies
/// its own in-flight bound underneath.
const PRECOMPUTE_CONCURRENCY: usize = 8;

/// One stored question-answer exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFragment {
    pub id: String,
    pub character_id: String,
    pub text: String,
    #[serde(default)]
    pub semantic: Option<SemanticVector>,
    #[serde(default)]
    pub emotion: Option<EmotionVector>,
    #[serde(default)]
    pub source: Option<String>,
}

impl MemoryFragment {
    pub fn new(id: impl Into<String>, character_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let fragment = Self {
            id: id.into(),
            character_id: character_id.into(),
            text: text.into(),
            semantic: None,
            emotion: None,
            source: None,
        };
        fragment.validate()?;
        Ok(fragment)
    }

    pub fn with_vectors(mut self, semantic: SemanticVector, emotion: EmotionVector) -> Self {
        self.semantic = Some(semantic);
        self.emotion = Some(emotion);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn is_cached(&self) -> bool {
        self.semantic.is_some() && self.emotion.is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidInput("fragment id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("fragment {:?} has empty text", self.id)));
        }
        Ok(())
    }
}

/// A character's memory: an ordered set of fragments with unique ids.
///
/// Treated as an immutable snapshot; mutations return a new unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryUnit {
    fragments: Vec<MemoryFragment>,
}

impl MemoryUnit {
    pub fn new(fragments: Vec<MemoryFragment>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(fragments.len());
        for (i, f) in fragments.iter().enumerate() {
            f.validate()?;
            if seen.insert(f.id.as_str(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: f.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { fragments })
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn fragments(&self) -> &[MemoryFragment] {
        &self.fragments
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MemoryFragment> {
        self.fragments.iter()
    }

    pub fn get(&self, id: &str) -> Option<&MemoryFragment> {
        self.fragments.iter().find(|f| f.id == id)
    }

    /// New snapshot with `fragment` appended.
    pub fn with_fragment(&self, fragment: MemoryFragment) -> Result<Self> {
        let mut fragments = self.fragments.clone();
        fragments.push(fragment);
        Self::new(fragments)
    }

    pub fn uncached_ids(&self) -> Vec<String> {
        self.fragments
            .iter()
            .filter(|f| !f.is_cached())
            .map(|f| f.id.clone())
            .collect()
    }

    pub fn into_fragments(self) -> Vec<MemoryFragment> {
        self.fragments
    }
}

impl<'a> IntoIterator for &'a MemoryUnit {
    type Item = &'a MemoryFragment;
    type IntoIter = std::slice::Iter<'a, MemoryFragment>;

    fn into_iter(self) -> Self::IntoIter {
        self.fragments.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub character_id: String,
    pub name: String,
    pub profile_text: String,
    #[serde(default)]
    pub labels: Option<PersonalityLabel>,
}

impl CharacterProfile {
    fn validate(&self) -> Result<()> {
        if self.character_id.trim().is_empty() {
            return Err(Error::InvalidInput("character_id is empty".into()));
        }
        if self.profile_text.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "profile {:?} has empty profile_text",
                self.character_id
            )));
        }
        if let Some(labels) = &self.labels {
            labels.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileCatalog {
    profiles: Vec<CharacterProfile>,
}

impl ProfileCatalog {
    pub fn new(profiles: Vec<CharacterProfile>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, p) in profiles.iter().enumerate() {
            p.validate()?;
            if seen.insert(p.character_id.as_str(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: p.character_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { profiles })
    }

    pub fn get(&self, character_id: &str) -> Option<&CharacterProfile> {
        self.profiles.iter().find(|p| p.character_id == character_id)
    }

    pub fn profiles(&self) -> &[CharacterProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Reads a JSONL file into `(line_number, record)` pairs, skipping blank lines.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Format {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path, line: usize, err: Error) -> Error {
    Error::Format {
        path: path.to_owned(),
        line,
        message: err.to_string(),
    }
}

pub fn load_memory(path: &Path) -> Result<MemoryUnit> {
    let records: Vec<(usize, MemoryFragment)> = read_jsonl(path)?;
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(records.len());
    let mut fragments = Vec::with_capacity(records.len());
    for (line, fragment) in records {
        fragment.validate().map_err(|e| format_error(path, line, e))?;
        if seen.insert(fragment.id.clone(), line).is_some() {
            return Err(Error::DuplicateId { id: fragment.id, line });
        }
        fragments.push(fragment);
    }
    Ok(MemoryUnit { fragments })
}

pub fn save_memory(unit: &MemoryUnit, path: &Path) -> Result<()> {
    write_jsonl(path, unit.iter())
}

pub fn load_profiles(path: &Path) -> Result<ProfileCatalog> {
    let records: Vec<(usize, CharacterProfile)> = read_jsonl(path)?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut profiles = Vec::with_capacity(records.len());
    for (line, profile) in records {
        profile.validate().map_err(|e| format_error(path, line, e))?;
        if seen.insert(profile.character_id.clone(), line).is_some() {
            return Err(Error::DuplicateId {
                id: profile.character_id,
                line,
            });
        }
        profiles.push(profile);
    }
    Ok(ProfileCatalog { profiles })
}

pub fn save_profiles(catalog: &ProfileCatalog, path: &Path) -> Result<()> {
    write_jsonl(path, catalog.profiles.iter())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FragmentStatus {
    Computed,
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentReport {
    pub fragment_id: String,
    pub status: FragmentStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrecomputeReport {
    pub entries: Vec<FragmentReport>,
}

impl PrecomputeReport {
    fn count(&self, pred: impl Fn(&FragmentStatus) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.status)).count()
    }

    pub fn computed(&self) -> usize {
        self.count(|s| matches!(s, FragmentStatus::Computed))
    }

    pub fn skipped(&self) -> usize {
        self.count(|s| matches!(s, FragmentStatus::Skipped))
    }

    pub fn failed(&self) -> usize {
        self.count(|s| matches!(s, FragmentStatus::Failed(_)))
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter_map(|e| match &e.status {
            FragmentStatus::Failed(msg) => Some((e.fragment_id.as_str(), msg.as_str())),
            _ => None,
        })
    }
}

async fn encode_fragment(
    mut fragment: MemoryFragment,
    embedder: &dyn Embedder,
    scorer: &EmotionScorer,
    overwrite: bool,
) -> (MemoryFragment, FragmentStatus) {
    if fragment.is_cached() && !overwrite {
        return (fragment, FragmentStatus::Skipped);
    }
    let mut errors = Vec::new();
    if overwrite || fragment.semantic.is_none() {
        match embed(&fragment.text, embedder).await {
            Ok(v) => fragment.semantic = Some(v),
            Err(e) => errors.push(format!("embedding: {e}")),
        }
    }
    if overwrite || fragment.emotion.is_none() {
        match scorer.score(&fragment.text).await {
            Ok(v) => fragment.emotion = Some(v),
            Err(e) => errors.push(format!("emotion: {e}")),
        }
    }
    let status = if errors.is_empty() {
        FragmentStatus::Computed
    } else {
        FragmentStatus::Failed(errors.join("; "))
    };
    (fragment, status)
}

/// Fills in missing semantic and emotion vectors for every fragment.
///
/// Fully cached fragments are skipped unless `overwrite`. Per-fragment
/// failures are recorded in the report; vectors that did succeed stay
/// cached.
pub async fn precompute_vectors(
    unit: &MemoryUnit,
    embedder: &dyn Embedder,
    scorer: &EmotionScorer,
    overwrite: bool,
) -> (MemoryUnit, PrecomputeReport) {
    let results: Vec<(MemoryFragment, FragmentStatus)> = stream::iter(unit.fragments.iter().cloned())
        .map(|f| encode_fragment(f, embedder, scorer, overwrite))
        .buffered(PRECOMPUTE_CONCURRENCY)
        .collect()
        .await;
    let mut report = PrecomputeReport::default();
    let mut fragments = Vec::with_capacity(results.len());
    for (fragment, status) in results {
        report.entries.push(FragmentReport {
            fragment_id: fragment.id.clone(),
            status,
        });
        fragments.push(fragment);
    }
    (MemoryUnit { fragments }, report)
}

#[derive(Debug, Deserialize)]
struct DialogueRow {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

/// Fragment text for one question-answer exchange.
pub fn dialogue_text(question: &str, answer: &str) -> String {
    format!("Q: {}\nA: {}", question.trim(), answer.trim())
}

/// Builds a memory unit from a JSONL file of `{question, answer, id?, source?}`
/// rows, one fragment per row. Rows without an id get `<character_id>-<line>`.
pub fn ingest_dialogues(path: &Path, character_id: &str) -> Result<MemoryUnit> {
    if character_id.trim().is_empty() {
        return Err(Error::InvalidInput("character_id is empty".into()));
    }
    let rows: Vec<(usize, DialogueRow)> = read_jsonl(path)?;
    let mut fragments = Vec::with_capacity(rows.len());
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, row) in rows {
        let field = |value: Option<String>, name: &str| -> Result<String> {
            value.filter(|v| !v.trim().is_empty()).ok_or_else(|| Error::Format {
                path: path.to_owned(),
                line,
                message: format!("row is missing {name}"),
            })
        };
        let question = field(row.question, "question")?;
        let answer = field(row.answer, "answer")?;
        let id = row.id.unwrap_or_else(|| format!("{character_id}-{line:05}"));
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::DuplicateId { id, line });
        }
        let mut fragment = MemoryFragment::new(id, character_id, dialogue_text(&question, &answer))
            .map_err(|e| format_error(path, line, e))?;
        fragment.source = row.source;
        fragments.push(fragment);
    }
    Ok(MemoryUnit { fragments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::llm_gateway::{ChatParams, MockChatBackend, MockEmbedder};
    use crate::prompts::builtin;
    use std::sync::Arc;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn scorer_with(mock: Arc<MockChatBackend>) -> EmotionScorer {
        EmotionScorer::new(mock, builtin("emotion_scoring", "en").unwrap(), ChatParams::default()).unwrap()
    }

    #[test]
    fn loads_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            concat!(
                r#"{"id":"c","character_id":"x","text":"third","semantic":null,"emotion":null,"source":null}"#, "\n",
                r#"{"id":"a","character_id":"x","text":"first","semantic":[0.5,1],"emotion":[1,2,3,4,5,6,7,8],"source":"s"}"#, "\n",
                r#"{"id":"b","character_id":"x","text":"second"}"#, "\n",
            ),
        );
        let unit = load_memory(&p).unwrap();
        let ids: Vec<_> = unit.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert!(unit.get("a").unwrap().is_cached());
        assert_eq!(unit.get("a").unwrap().source.as_deref(), Some("s"));
    }

    #[test]
    fn duplicate_id_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            concat!(
                r#"{"id":"a","character_id":"x","text":"one"}"#, "\n",
                r#"{"id":"a","character_id":"x","text":"two"}"#, "\n",
            ),
        );
        match load_memory(&p) {
            Err(Error::DuplicateId { id, line }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            concat!(
                r#"{"id":"a","character_id":"x","text":"one"}"#, "\n",
                "\n",
                r#"{"id":"b","character_id":"x","text":"two","emotion":[0,1,1,1,1,1,1,1]}"#, "\n",
            ),
        );
        match load_memory(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "e.jsonl", r#"{"id":"b","character_id":"x","text":"  "}"#);
        assert!(matches!(load_memory(&p), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_empty_unit() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.jsonl", "");
        assert!(load_memory(&p).unwrap().is_empty());
    }

    #[test]
    fn save_writes_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let unit = MemoryUnit::new(vec![MemoryFragment::new("a", "x", "hi").unwrap()]).unwrap();
        save_memory(&unit, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "{\"id\":\"a\",\"character_id\":\"x\",\"text\":\"hi\",\"semantic\":null,\"emotion\":null,\"source\":null}\n"
        );
    }

    #[test]
    fn unit_rejects_duplicates_and_appends_snapshots() {
        let a = MemoryFragment::new("a", "x", "one").unwrap();
        let unit = MemoryUnit::new(vec![a.clone()]).unwrap();
        assert!(unit.with_fragment(a).is_err());
        let bigger = unit.with_fragment(MemoryFragment::new("b", "x", "two").unwrap()).unwrap();
        assert_eq!(unit.len(), 1);
        assert_eq!(bigger.len(), 2);
    }

    #[test]
    fn profiles_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let catalog = ProfileCatalog::new(vec![CharacterProfile {
            character_id: "h".into(),
            name: "Hermione".into(),
            profile_text: "Clever.".into(),
            labels: Some(PersonalityLabel {
                mbti_type: Some("ESTJ".into()),
                ..PersonalityLabel::default()
            }),
        }])
        .unwrap();
        save_profiles(&catalog, &p).unwrap();
        assert_eq!(load_profiles(&p).unwrap(), catalog);
    }

    #[tokio::test]
    async fn precompute_fills_uncached() {
        let unit = MemoryUnit::new(vec![
            MemoryFragment::new("a", "x", "happy day").unwrap(),
            MemoryFragment::new("b", "x", "sad night").unwrap(),
        ])
        .unwrap();
        let embedder = HashingEmbedder::new(8);
        let scorer = scorer_with(Arc::new(MockChatBackend::emotion_scorer()));
        let (out, report) = precompute_vectors(&unit, &embedder, &scorer, false).await;
        assert_eq!(report.computed(), 2);
        assert!(out.uncached_ids().is_empty());
    }

    #[tokio::test]
    async fn precompute_skips_cached_fragments() {
        let embedder = MockEmbedder::new(8);
        let mock = Arc::new(MockChatBackend::emotion_scorer());
        let scorer = scorer_with(mock.clone());
        let cached = MemoryFragment::new("a", "x", "done")
            .unwrap()
            .with_vectors(HashingEmbedder::new(8).embed_text("done"), EmotionVector::uniform(3).unwrap());
        let unit = MemoryUnit::new(vec![cached, MemoryFragment::new("b", "x", "todo").unwrap()]).unwrap();
        let (out, report) = precompute_vectors(&unit, &embedder, &scorer, false).await;
        assert_eq!(embedder.calls(), 1);
        assert_eq!(mock.calls(), 1);
        assert_eq!(report.skipped(), 1);
        assert_eq!(report.computed(), 1);

        // Second run is a no-op.
        let (again, report) = precompute_vectors(&out, &embedder, &scorer, false).await;
        assert_eq!(embedder.calls(), 1);
        assert_eq!(mock.calls(), 1);
        assert_eq!(report.skipped(), 2);
        assert_eq!(again, out);

        let (_, report) = precompute_vectors(&out, &embedder, &scorer, true).await;
        assert_eq!(report.computed(), 2);
        assert_eq!(embedder.calls(), 3);
    }

    #[tokio::test]
    async fn precompute_records_partial_failure() {
        let unit = MemoryUnit::new(vec![
            MemoryFragment::new("f1", "x", "fine one").unwrap(),
            MemoryFragment::new("f2", "x", "this one is CURSED").unwrap(),
            MemoryFragment::new("f3", "x", "fine three").unwrap(),
        ])
        .unwrap();
        let embedder = HashingEmbedder::new(8);
        let scorer = scorer_with(Arc::new(MockChatBackend::emotion_scorer().fail_when_contains("CURSED")));
        let (out, report) = precompute_vectors(&unit, &embedder, &scorer, false).await;
        assert_eq!(report.computed(), 2);
        assert_eq!(report.failed(), 1);
        assert_eq!(report.failures().next().unwrap().0, "f2");
        assert!(out.get("f1").unwrap().is_cached());
        assert!(out.get("f3").unwrap().is_cached());
        let f2 = out.get("f2").unwrap();
        assert!(f2.semantic.is_some() && f2.emotion.is_none());
        assert_eq!(out.uncached_ids(), vec!["f2".to_string()]);
    }

    #[test]
    fn ingest_builds_one_fragment_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "raw.jsonl",
            concat!(
                r#"{"question":"Who are you?","answer":"A wizard."}"#, "\n",
                r#"{"id":"custom","question":"Why?","answer":"Because.","source":"scene 3"}"#, "\n",
            ),
        );
        let unit = ingest_dialogues(&p, "gandalf").unwrap();
        assert_eq!(unit.len(), 2);
        assert_eq!(unit.fragments()[0].id, "gandalf-00001");
        assert_eq!(unit.fragments()[0].text, "Q: Who are you?\nA: A wizard.");
        assert_eq!(unit.fragments()[1].id, "custom");
        assert_eq!(unit.fragments()[1].source.as_deref(), Some("scene 3"));
    }

    #[test]
    fn ingest_rejects_row_without_answer() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "raw.jsonl",
            concat!(
                r#"{"question":"a","answer":"b"}"#, "\n",
                r#"{"question":"c"}"#, "\n",
            ),
        );
        match ingest_dialogues(&p, "x") {
            Err(Error::Format { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("answer"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
