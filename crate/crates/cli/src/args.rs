use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emomem_core::config::RetrievalSection;
use emomem_core::evaluation::Instrument;
use emomem_core::{DistanceMetric, RetrievalStrategy, StrategyKind};

#[derive(Debug, Parser)]
#[command(name = "emomem", version, about = "Emotion-aware memory retrieval for role-playing agents")]
pub struct Cli {
    /// TOML config; defaults to ./emomem.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Use the hashing embedder and deterministic mock chat models.
    #[arg(long, global = true)]
    pub offline: bool,

    /// Overrides `memory_dir` from the config.
    #[arg(long, global = true)]
    pub memory_dir: Option<PathBuf>,

    /// Overrides `profiles` from the config.
    #[arg(long, global = true)]
    pub profiles: Option<PathBuf>,

    /// Overrides `templates` from the config.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,

    /// -v for info, -vv for debug logging on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert question/answer JSONL into a memory file.
    Ingest {
        /// JSONL rows of {question, answer, id?, source?}.
        input: PathBuf,
        #[arg(long)]
        character: String,
        /// Defaults to <memory_dir>/<character>.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute missing semantic and emotion vectors and save them.
    Precompute {
        #[arg(long)]
        character: String,
        /// Memory file; defaults to <memory_dir>/<character>.jsonl.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Recompute vectors that are already cached.
        #[arg(long)]
        overwrite: bool,
    },
    /// Print the ranked memory fragments for a query.
    Retrieve {
        query: String,
        #[arg(long)]
        character: String,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Talk to a character; one query per line on stdin.
    Chat {
        #[arg(long)]
        character: String,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Print the fragments each reply was grounded on.
        #[arg(long)]
        show_memory: bool,
        /// Append every turn as a JSON line to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run the questionnaire for characters and score their personality.
    Evaluate {
        #[arg(long)]
        questionnaire: PathBuf,
        #[arg(long, default_value = "mbti")]
        instrument: Instrument,
        /// Characters to evaluate; defaults to every profile.
        #[arg(long, value_delimiter = ',')]
        characters: Vec<String>,
        /// Ground-truth labels; overrides labels stored in profiles.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Write one transcript JSON file per character here.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Evaluate several strategies on the same characters.
    Compare {
        #[arg(long)]
        questionnaire: PathBuf,
        #[arg(long, default_value = "mbti")]
        instrument: Instrument,
        #[arg(long, value_delimiter = ',')]
        characters: Vec<String>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Defaults to all five.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve retrieval and chat over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// Retrieval knobs; unset flags fall back to the config.
#[derive(Debug, Clone, Default, Args)]
pub struct StrategyArgs {
    /// semantic-only, c-a, c-m, s-s or s-e.
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Number of fragments to retrieve.
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Shortlist size for s-s and s-e.
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Semantic weight for c-a.
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// euclidean or cosine.
    #[arg(long)]
    pub metric: Option<DistanceMetric>,
    /// Fuse raw distances without min-max normalization.
    #[arg(long)]
    pub raw: bool,
}

impl StrategyArgs {
    pub fn apply(&self, base: &RetrievalSection) -> (RetrievalStrategy, usize) {
        let mut s = base.strategy;
        if let Some(kind) = self.strategy {
            s.kind = kind;
        }
        if let Some(p) = self.pool_size {
            s.pool_size = Some(p);
        }
        if let Some(w) = self.weight {
            s.weight = w;
        }
        if let Some(e) = self.epsilon {
            s.epsilon = e;
        }
        if let Some(m) = self.metric {
            s.metric = m;
        }
        if self.raw {
            s.normalize = false;
        }
        (s, self.k.unwrap_or(base.k))
    }
}
