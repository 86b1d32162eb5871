//! `{placeholder}` templates for emotion scoring, response generation and
//! personality assessment.
//!
//! Syntax: `{name}` where `name` matches `[A-Za-z_][A-Za-z0-9_]*` is a
//! placeholder; `{{` and `}}` are literal braces; any other brace is kept
//! verbatim. Substitution is single-pass, so values are inserted as-is.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::llm_gateway::{ChatMessage, ChatParams, ChatRequest};
use crate::memory_store::{CharacterProfile, MemoryFragment};

pub const DEFAULT_LANGUAGE: &str = "en";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    segments: Vec<Segment>,
    required: BTreeSet<String>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(is_ident_start)
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_segments(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(pos) = rest.find(['{', '}']) {
        literal.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            literal.push(tail.as_bytes()[0] as char);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if is_ident(name) {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Var(name.to_owned()));
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        literal.push(tail.as_bytes()[0] as char);
        rest = &tail[1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    segments
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let segments = parse_segments(&body);
        let required = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Var(v) => Some(v.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Self {
            name: name.into(),
            body,
            segments,
            required,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Fails if the template lacks any of `names`.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| !self.required.contains(*n))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "template {:?} lacks placeholder(s): {}",
                self.name,
                missing.join(", ")
            )))
        }
    }

    pub fn render(&self, vars: &HashMap<String, String>) -> Result<String> {
        let lookup: BTreeMap<&str, &str> = vars.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        self.render_lookup(&lookup)
    }

    pub fn render_with(&self, vars: &[(&str, &str)]) -> Result<String> {
        let lookup: BTreeMap<&str, &str> = vars.iter().copied().collect();
        self.render_lookup(&lookup)
    }

    fn render_lookup(&self, vars: &BTreeMap<&str, &str>) -> Result<String> {
        let missing: Vec<String> = self
            .required
            .iter()
            .filter(|n| !vars.contains_key(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingVariable(missing));
        }
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => out.push_str(s),
                Segment::Var(v) => out.push_str(vars[v.as_str()]),
            }
        }
        Ok(out)
    }
}

pub fn render(template: &PromptTemplate, vars: &HashMap<String, String>) -> Result<String> {
    template.render(vars)
}

const BUILTIN: &[(&str, &str)] = &[
    ("emotion_scoring.en", include_str!("../templates/emotion_scoring.en.txt")),
    ("emotion_scoring.zh", include_str!("../templates/emotion_scoring.zh.txt")),
    ("generation.en", include_str!("../templates/generation.en.txt")),
    ("generation.zh", include_str!("../templates/generation.zh.txt")),
    ("empty_memory.en", include_str!("../templates/empty_memory.en.txt")),
    ("empty_memory.zh", include_str!("../templates/empty_memory.zh.txt")),
    ("assessment.en", include_str!("../templates/assessment.en.txt")),
    ("assessment.zh", include_str!("../templates/assessment.zh.txt")),
];

/// A built-in template by base name and language tag.
pub fn builtin(name: &str, language: &str) -> Result<PromptTemplate> {
    TemplateSet::builtin().get(name, language)
}

/// Registry of templates keyed by `<name>.<language>`.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let mut set = Self::default();
        for (key, body) in BUILTIN {
            set.insert(PromptTemplate::parse(*key, *body));
        }
        set
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    /// Built-ins overlaid with every `*.txt` file in `dir`; the file stem is
    /// the registry key (e.g. `generation.en.txt` -> `generation.en`).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            set.insert(PromptTemplate::parse(stem, body));
        }
        Ok(set)
    }

    pub fn get(&self, name: &str, language: &str) -> Result<PromptTemplate> {
        let key = format!("{name}.{language}");
        self.templates
            .get(&key)
            .cloned()
            .ok_or(Error::UnknownTemplate(key))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// Numbered memory list, one fragment per entry, in the given order.
fn format_memories(memories: &[MemoryFragment]) -> String {
    let mut out = String::new();
    for (i, fragment) in memories.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("[{}] {}", i + 1, fragment.text.trim_end()));
    }
    out
}

/// Builds response-generation requests from a profile, retrieved memories
/// and the user query.
#[derive(Debug, Clone)]
pub struct GenerationPromptBuilder {
    template: PromptTemplate,
    empty_notice: String,
    params: ChatParams,
}

impl GenerationPromptBuilder {
    pub const PLACEHOLDERS: [&'static str; 4] = ["character_name", "profile", "memories", "query"];

    pub fn new(template: PromptTemplate, empty_notice: impl Into<String>, params: ChatParams) -> Result<Self> {
        template.require(&Self::PLACEHOLDERS)?;
        Ok(Self {
            template,
            empty_notice: empty_notice.into().trim().to_owned(),
            params,
        })
    }

    pub fn from_set(set: &TemplateSet, language: &str, params: ChatParams) -> Result<Self> {
        let template = set.get("generation", language)?;
        let notice = set.get("empty_memory", language)?;
        Self::new(template, notice.body(), params)
    }

    pub fn render_prompt(&self, profile: &CharacterProfile, memories: &[MemoryFragment], query: &str) -> Result<String> {
        let memories = if memories.is_empty() {
            self.empty_notice.clone()
        } else {
            format_memories(memories)
        };
        self.template.render_with(&[
            ("character_name", profile.name.as_str()),
            ("profile", profile.profile_text.trim_end()),
            ("memories", memories.as_str()),
            ("query", query),
        ])
    }

    pub fn build_generation_prompt(
        &self,
        profile: &CharacterProfile,
        memories: &[MemoryFragment],
        query: &str,
    ) -> Result<ChatRequest> {
        let prompt = self.render_prompt(profile, memories, query)?;
        ChatRequest::new(vec![ChatMessage::user(prompt)], &self.params)
    }
}
