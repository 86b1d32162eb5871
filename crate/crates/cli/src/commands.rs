use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use emomem_core::evaluation::{
    administer, assess, compare_strategies, compute_metrics, load_labels, CharacterCase, Questionnaire,
};
use emomem_core::memory_store::{ingest_dialogues, load_memory, save_memory};
use emomem_core::{CharacterProfile, Engine, EngineConfig, Error, MemoryUnit, ProfileCatalog, RetrievalStrategy, ScoredFragment, StrategyKind};
use serde::Serialize;

use crate::args::{Cli, Command, StrategyArgs};
use crate::exit::{usage, BACKEND};

/// Resolved configuration plus the global path overrides.
pub struct Context {
    pub config: EngineConfig,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let path = match &cli.config {
            Some(p) => Some(p.clone()),
            None => Some(PathBuf::from("emomem.toml")).filter(|p| p.exists()),
        };
        let mut config = match path {
            Some(p) => EngineConfig::load(&p)?,
            None => EngineConfig::default(),
        };
        if cli.offline {
            config = config.into_offline();
        }
        if let Some(p) = &cli.memory_dir {
            config.memory_dir = Some(p.clone());
        }
        if let Some(p) = &cli.profiles {
            config.profiles = Some(p.clone());
        }
        if let Some(p) = &cli.templates {
            config.templates = Some(p.clone());
        }
        config.validate()?;
        Ok(Self { config })
    }

    pub fn memory_file(&self, character: &str, explicit: Option<&Path>) -> Result<PathBuf> {
        match explicit {
            Some(p) => Ok(p.to_owned()),
            None if self.config.memory_dir.is_none() => {
                Err(usage("no memory file: pass --memory or configure memory_dir"))
            }
            None => Ok(self.config.memory_path(character)?),
        }
    }

    pub fn load_unit(&self, character: &str, explicit: Option<&Path>) -> Result<MemoryUnit> {
        let path = self.memory_file(character, explicit)?;
        if !path.exists() {
            return Err(Error::UnknownCharacter(character.to_owned()).into());
        }
        Ok(load_memory(&path)?)
    }

    pub fn catalog(&self) -> Result<ProfileCatalog> {
        if self.config.profiles.is_none() {
            return Err(usage("no profiles: pass --profiles or configure profiles"));
        }
        Ok(self.config.load_profiles()?)
    }

    pub fn profile(&self, character: &str) -> Result<CharacterProfile> {
        self.catalog()?
            .get(character)
            .cloned()
            .ok_or_else(|| Error::UnknownCharacter(character.to_owned()).into())
    }

    pub fn engine(&self) -> Result<Engine> {
        Ok(self.config.build_engine()?)
    }

    pub fn strategy(&self, args: &StrategyArgs) -> Result<(RetrievalStrategy, usize)> {
        let (s, k) = args.apply(&self.config.retrieval);
        s.validate(k)?;
        Ok((s, k))
    }
}

/// Runs a command; the returned code is non-zero only for partial failures
/// that still produced output.
pub async fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let ctx = Context::from_cli(&cli)?;
    match cli.command {
        Command::Ingest { input, character, out: dest } => ingest(&ctx, &input, &character, dest.as_deref(), out),
        Command::Precompute {
            character,
            memory,
            overwrite,
        } => precompute(&ctx, &character, memory.as_deref(), overwrite, out).await,
        Command::Retrieve {
            query,
            character,
            memory,
            strategy,
            json,
        } => {
            let (s, k) = ctx.strategy(&strategy)?;
            let unit = ctx.load_unit(&character, memory.as_deref())?;
            if let Some(uncached) = Some(unit.uncached_ids()).filter(|u| !u.is_empty()) {
                return Err(Error::UncachedVector(uncached).into());
            }
            let results = ctx.engine()?.retrieve(&unit, &query, &s, k).await?;
            if json {
                serde_json::to_writer_pretty(&mut *out, &results)?;
                writeln!(out)?;
            } else {
                write!(out, "{}", format_results(&results))?;
            }
            Ok(0)
        }
        Command::Chat {
            character,
            memory,
            strategy,
            show_memory,
            transcript,
        } => {
            let (s, k) = ctx.strategy(&strategy)?;
            let unit = ctx.load_unit(&character, memory.as_deref())?;
            let profile = ctx.profile(&character)?;
            let engine = ctx.engine()?;
            let stdin = std::io::stdin();
            let session = ChatSession {
                engine: &engine,
                profile: &profile,
                unit: &unit,
                strategy: &s,
                k,
                show_memory,
            };
            session.run(stdin.lock(), out, transcript.as_deref()).await
        }
        Command::Evaluate {
            questionnaire,
            instrument,
            characters,
            labels,
            strategy,
            transcripts,
        } => {
            let (s, k) = ctx.strategy(&strategy)?;
            let questionnaire = Questionnaire::load(&questionnaire, instrument)?;
            let cases = cases(&ctx, &characters, labels.as_deref())?;
            evaluate(&ctx, &cases, &questionnaire, &s, k, transcripts.as_deref(), out).await
        }
        Command::Compare {
            questionnaire,
            instrument,
            characters,
            labels,
            strategies,
            strategy,
            csv,
        } => {
            let (base, k) = ctx.strategy(&strategy)?;
            let kinds = if strategies.is_empty() {
                StrategyKind::ALL.to_vec()
            } else {
                strategies
            };
            let strategies: Vec<RetrievalStrategy> = kinds
                .into_iter()
                .map(|kind| RetrievalStrategy { kind, ..base })
                .collect();
            let questionnaire = Questionnaire::load(&questionnaire, instrument)?;
            let cases = cases(&ctx, &characters, labels.as_deref())?;
            let report = compare_strategies(&ctx.engine()?, &cases, &questionnaire, &strategies, k).await?;
            write!(out, "{}", report.to_table())?;
            if let Some(path) = csv {
                fs::write(&path, report.to_csv()?).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(0)
        }
        Command::Serve { addr } => {
            let state = crate::service::AppState::load(&ctx)?;
            crate::service::serve(state, addr).await?;
            Ok(0)
        }
    }
}

fn ingest(ctx: &Context, input: &Path, character: &str, dest: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let unit = ingest_dialogues(input, character)?;
    let dest = ctx.memory_file(character, dest)?;
    if unit.is_empty() {
        tracing::warn!(input = %input.display(), "no dialogue rows found; writing an empty memory file");
        eprintln!("warning: {} has no dialogue rows", input.display());
    }
    save_memory(&unit, &dest)?;
    writeln!(out, "{} fragments written to {}", unit.len(), dest.display())?;
    Ok(0)
}

async fn precompute(ctx: &Context, character: &str, memory: Option<&Path>, overwrite: bool, out: &mut dyn Write) -> Result<i32> {
    let path = ctx.memory_file(character, memory)?;
    let unit = ctx.load_unit(character, memory)?;
    let (updated, report) = ctx.engine()?.precompute(&unit, overwrite).await;
    save_memory(&updated, &path)?;
    writeln!(
        out,
        "{} computed, {} already cached, {} failed",
        report.computed(),
        report.skipped(),
        report.failed()
    )?;
    for (id, err) in report.failures() {
        writeln!(out, "  {id}: {err}")?;
    }
    Ok(if report.failed() > 0 { BACKEND } else { 0 })
}

/// Aligned table of retrieval results in rank order.
pub fn format_results(results: &[ScoredFragment]) -> String {
    let width = results.iter().map(|r| r.fragment_id.len()).max().unwrap_or(0).max(2);
    let mut s = format!(
        "{:>4}  {:<width$}  {:>10}  {:>10}  {:>10}\n",
        "rank", "id", "semantic", "emotional", "final"
    );
    for (i, r) in results.iter().enumerate() {
        s.push_str(&format!(
            "{:>4}  {:<width$}  {:>10.6}  {:>10.6}  {:>10.6}\n",
            i + 1,
            r.fragment_id,
            r.semantic_score,
            r.emotional_score,
            r.final_score
        ));
    }
    s
}

#[derive(Serialize)]
struct TurnLog<'a> {
    turn: usize,
    query: &'a str,
    reply: Option<&'a str>,
    used_fragment_ids: Vec<&'a str>,
    error: Option<String>,
}

pub struct ChatSession<'a> {
    pub engine: &'a Engine,
    pub profile: &'a CharacterProfile,
    pub unit: &'a MemoryUnit,
    pub strategy: &'a RetrievalStrategy,
    pub k: usize,
    pub show_memory: bool,
}

impl ChatSession<'_> {
    /// One turn per non-blank input line until EOF or `/quit`. Failed turns
    /// are reported and the session continues.
    pub async fn run(&self, input: impl BufRead, out: &mut dyn Write, transcript: Option<&Path>) -> Result<i32> {
        let mut log = match transcript {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening {}", p.display()))?,
            ),
            None => None,
        };
        let mut turn = 0;
        for line in input.lines() {
            let line = line?;
            let query = line.trim();
            if query.is_empty() {
                continue;
            }
            if query == "/quit" {
                break;
            }
            turn += 1;
            let result = self
                .engine
                .respond(self.profile, self.unit, query, self.strategy, self.k)
                .await;
            let entry = match &result {
                Ok(r) => {
                    if self.show_memory {
                        writeln!(out, "-- memory used:")?;
                        for s in &r.retrieved {
                            let text = self.unit.get(&s.fragment_id).map(|f| f.text.as_str()).unwrap_or("");
                            writeln!(out, "   [{}] ({:.4}) {}", s.fragment_id, s.final_score, text.replace('\n', " / "))?;
                        }
                    }
                    writeln!(out, "{}: {}", self.profile.name, r.reply.trim())?;
                    TurnLog {
                        turn,
                        query,
                        reply: Some(&r.reply),
                        used_fragment_ids: r.retrieved.iter().map(|s| s.fragment_id.as_str()).collect(),
                        error: None,
                    }
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    TurnLog {
                        turn,
                        query,
                        reply: None,
                        used_fragment_ids: Vec::new(),
                        error: Some(err.to_string()),
                    }
                }
            };
            if let Some(f) = log.as_mut() {
                serde_json::to_writer(&mut *f, &entry)?;
                writeln!(f)?;
            }
            out.flush()?;
        }
        Ok(0)
    }
}

fn cases(ctx: &Context, characters: &[String], labels: Option<&Path>) -> Result<Vec<CharacterCase>> {
    let catalog = ctx.catalog()?;
    let labels = labels.map(load_labels).transpose()?.unwrap_or_default();
    let ids: Vec<String> = if characters.is_empty() {
        catalog.profiles().iter().map(|p| p.character_id.clone()).collect()
    } else {
        characters.to_vec()
    };
    ids.iter()
        .map(|id| {
            let profile = catalog
                .get(id)
                .cloned()
                .ok_or_else(|| Error::UnknownCharacter(id.clone()))?;
            let mut case = CharacterCase::new(profile, ctx.load_unit(id, None)?);
            if let Some(l) = labels.get(id) {
                case = case.with_label(l.clone());
            }
            Ok(case)
        })
        .collect()
}

async fn evaluate(
    ctx: &Context,
    cases: &[CharacterCase],
    questionnaire: &Questionnaire,
    strategy: &RetrievalStrategy,
    k: usize,
    transcripts: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let uncached: Vec<String> = cases.iter().flat_map(|c| c.unit.uncached_ids()).collect();
    if !uncached.is_empty() {
        return Err(Error::UncachedVector(uncached).into());
    }
    let engine = ctx.engine()?;
    if let Some(dir) = transcripts {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let instrument = questionnaire.instrument;
    let mut results = BTreeMap::new();
    let mut labels = BTreeMap::new();
    let mut incomplete = false;
    for case in cases {
        let transcript = administer(&engine, case, questionnaire, strategy, k).await;
        if let Some(dir) = transcripts {
            let path = dir.join(format!("{}.{}.json", case.id(), strategy.kind.code()));
            fs::write(&path, serde_json::to_string_pretty(&transcript)?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        let assessment = assess(&transcript, &case.profile.name, engine.judge()).await;
        match assessment.result() {
            Ok(r) => {
                let scores: Vec<String> = instrument
                    .dimensions()
                    .iter()
                    .zip(&r.scores)
                    .map(|(d, s)| format!("{d}={s:.2}"))
                    .collect();
                writeln!(out, "{}: {} ({})", case.id(), r.type_string(), scores.join(", "))?;
                if let Some(label) = case.label.as_ref().filter(|l| l.letters(instrument).is_some()) {
                    labels.insert(case.id().to_owned(), label.clone());
                    results.insert(case.id().to_owned(), r);
                }
            }
            Err(err) => {
                incomplete = true;
                writeln!(out, "{}: not assessed ({err})", case.id())?;
            }
        }
        if transcript.failed_items() > 0 {
            incomplete = true;
            writeln!(out, "  {} of {} items failed", transcript.failed_items(), transcript.entries.len())?;
        }
    }
    if !results.is_empty() {
        let m = compute_metrics(&results, &labels, instrument)?;
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"));
        writeln!(
            out,
            "{} over {} labelled characters: acc_dim {:.4}, acc_full {:.4}, mse {}, mae {}",
            instrument,
            m.characters,
            m.acc_dim,
            m.acc_full,
            opt(m.mse),
            opt(m.mae)
        )?;
    }
    Ok(if incomplete { BACKEND } else { 0 })
}
