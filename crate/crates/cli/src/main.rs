//! `qam`: command-line driver for the synthesis pipeline.
//!
//! Exit codes: 0 success, 1 validation error, 2 backend failure, 64 usage.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qameleon::corpus::LanguageCode;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Core(#[from] qameleon::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Backend(_) => 2,
            CliError::Core(e) if e.is_backend() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qam", version, about = "Multilingual QA data synthesis pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// `LANG=PATH` pair.
#[derive(Debug, Clone)]
pub struct LangPath {
    pub language: LanguageCode,
    pub path: PathBuf,
}

fn lang_path(s: &str) -> Result<LangPath, String> {
    let (l, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LANG=PATH, got {s:?}"))?;
    let language = LanguageCode::new(l).map_err(|e| e.to_string())?;
    Ok(LangPath {
        language,
        path: PathBuf::from(p),
    })
}

fn language(s: &str) -> Result<LanguageCode, String> {
    LanguageCode::new(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mt,
    Pe,
    Pt,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a SQuAD-format file into JSONL.
    Ingest(IngestArgs),
    /// Sample unlabeled passages from a pool.
    Sample(SampleArgs),
    /// Build the exemplar set for one language.
    Exemplars(ExemplarsArgs),
    /// Tune a soft prompt on the toy model.
    Tune(TuneArgs),
    /// Generate synthetic QA data.
    Synth(SynthArgs),
    /// Apply the consistency filters to a JSONL dataset.
    Filter(FilterArgs),
    /// Combine English gold with synthetic sets; optional size sweep.
    Assemble(AssembleArgs),
    /// Score predictions with EM and F1.
    Eval(EvalArgs),
    /// Question-type distribution by leading words.
    Taxonomy(TaxonomyArgs),
    /// Per-language example counts.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Language of every entry; omit with --tydiqa.
    #[arg(long, value_parser = language, required_unless_present = "tydiqa")]
    pub language: Option<LanguageCode>,
    /// Take each entry's language from its TyDiQA id prefix.
    #[arg(long, conflicts_with = "language")]
    pub tydiqa: bool,
    /// Dataset name; defaults to the input file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Passage pool, one `{"id","text","source"?}` object per line.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_parser = language)]
    pub language: LanguageCode,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = qameleon::corpus::MIN_PASSAGE_CHARS)]
    pub min_chars: usize,
    #[arg(long, default_value_t = qameleon::corpus::MAX_PASSAGE_CHARS)]
    pub max_chars: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExemplarsArgs {
    #[arg(long, value_parser = language)]
    pub language: LanguageCode,
    /// Target-language gold JSONL (few_shot); defaults to paths.gold.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// English gold JSONL (english_only); defaults to paths.english.
    #[arg(long)]
    pub english: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// English gold JSONL (mt); defaults to paths.english.
    #[arg(long)]
    pub english: Option<PathBuf>,
    /// `LANG=PATH` passage files (pe, pt); defaults to paths.passages.
    #[arg(long = "passages", value_parser = lang_path)]
    pub passages: Vec<LangPath>,
    /// `LANG=PATH` exemplar sets (pe).
    #[arg(long = "exemplars", value_parser = lang_path)]
    pub exemplars: Vec<LangPath>,
    /// `LANG=PATH` tuned prompts (pt); without any, pt calls the backend.
    #[arg(long = "prompt", value_parser = lang_path)]
    pub prompts: Vec<LangPath>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also apply round-trip filtering with this exemplar set.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// English gold JSONL; defaults to paths.english.
    #[arg(long)]
    pub english: Option<PathBuf>,
    /// `LANG=PATH` filtered synthetic sets.
    #[arg(long = "synthetic", value_parser = lang_path)]
    pub synthetic: Vec<LangPath>,
    /// Comma-separated synthetic subsample sizes.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON object mapping example id to predicted answer.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also report one ring over all languages.
    #[arg(long)]
    pub pool: bool,
    #[arg(long, default_value_t = qameleon::taxonomy::DEFAULT_OTHER_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// JSONL datasets.
    #[arg(long)]
    pub jsonl: Vec<PathBuf>,
    /// `LANG=PATH` SQuAD-format files.
    #[arg(long, value_parser = lang_path)]
    pub squad: Vec<LangPath>,
    /// Mixed-language TyDiQA-GoldP files.
    #[arg(long)]
    pub tydiqa: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = commands::Context { config, argv };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Exemplars(a) => commands::exemplars(&ctx, a),
        Command::Tune(a) => commands::tune(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Filter(a) => commands::filter(&ctx, a),
        Command::Assemble(a) => commands::assemble(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Taxonomy(a) => commands::taxonomy(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qam: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
