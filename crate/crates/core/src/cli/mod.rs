//! Command-line surface. `run` parses arguments, executes one subcommand and
//! returns the process exit status: 0 on success, 1 on a runtime error (one
//! `error: ...` line on stderr), 2 on a usage error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    AugmentConfig, CommandJudgeConfig, ExperimentConfig, FixtureConfig, JudgesConfig, MixConfig, TokenizerConfig,
    CONFIG_SCHEMA_VERSION,
};

use crate::augment::RandomMode;
use crate::corpus::{Dimension, Source};
use crate::ensemble::MergeStrategy;
use crate::train::ExplanationMode;

#[derive(Debug, Parser)]
#[command(name = "expltune", version, about = "Explanation-augmented fine-tuning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Reject unknown fields in input corpora.
    #[arg(long)]
    pub strict_schema: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Fine-tune adapters on one dimension.
    Train(TrainArgs),
    /// Score corpora with one checkpoint (plus the untrained baseline).
    Eval(EvalArgs),
    /// Score every corpus with every checkpoint.
    CrossEval(EvalArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Compare merged judgments with a golden set.
    Calibrate(CalibrateArgs),
    /// Collect artifact tables from run directories into one report.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate the synthetic fixture, or normalize an existing JSONL corpus.
    Build(BuildArgs),
    /// Collect judge-ensemble judgments and merge them into ground truth.
    Merge(MergeArgs),
    /// Replace explanations with random tokens.
    Augment(AugmentArgs),
    /// Balanced mixture of several corpora plus its lexical profiles.
    Mix(MixArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ingest this JSONL corpus instead of generating one.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub source: Option<Source>,
    /// Probability that a stored score is off by one raw point.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Pad assessment explanations to at least this many words.
    #[arg(long)]
    pub min_words: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Previously collected judgments; collected afresh when absent.
    #[arg(long, value_name = "PATH")]
    pub judgments: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<MergeStrategy>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(
        long,
        visible_alias = "mode",
        value_name = "fully|shuffle|associated|w-shuffle|w-associated"
    )]
    pub random: Option<RandomMode>,
    #[arg(long, value_name = "PATH")]
    pub dictionary: Option<PathBuf>,
    #[arg(long, value_name = "HEX")]
    pub dictionary_sha256: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub n_words: Option<usize>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "corpus", value_name = "PATH", required = true)]
    pub corpora: Vec<PathBuf>,
    #[arg(long)]
    pub per_source: Option<usize>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long, value_name = "N")]
    pub trunc: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Held-out corpus; the tail of `--corpus` is used when absent.
    #[arg(long, value_name = "PATH")]
    pub eval_corpus: Option<PathBuf>,
    /// Base checkpoint; a base is pretrained and saved when absent.
    #[arg(long, value_name = "PATH")]
    pub base: Option<PathBuf>,
    /// Corpus for pretraining the base; defaults to `--corpus`.
    #[arg(long, value_name = "PATH")]
    pub pretrain_corpus: Option<PathBuf>,
    #[arg(long, value_name = "none|assessment|confidence|both")]
    pub mode: Option<ExplanationMode>,
    #[arg(long, value_name = "N")]
    pub trunc: Option<usize>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
    /// Store and use the frozen base in 4-bit NormalFloat form.
    #[arg(long)]
    pub nf4: bool,
    /// Label of the training corpus in reports; the file stem when absent.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "checkpoint", value_name = "PATH", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Base for adapter-only checkpoints; read from the checkpoint's run
    /// directory when absent.
    #[arg(long, value_name = "PATH")]
    pub base: Option<PathBuf>,
    #[arg(long = "corpus", value_name = "PATH", required = true)]
    pub corpora: Vec<PathBuf>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-block logit-lens entropy differences between two checkpoints.
    Entropy(PairArgs),
    /// Frobenius norms of effective adapter-delta differences.
    LoraDiff(PairArgs),
    /// Rank of the gold score token after every block.
    Rank(RankArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint trained with explanations.
    #[arg(long, value_name = "PATH")]
    pub explained: PathBuf,
    /// Checkpoint trained on scores only.
    #[arg(long, value_name = "PATH")]
    pub plain: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub base: Option<PathBuf>,
    /// Evaluation corpus (entropy only).
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub base: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dimension: Option<Dimension>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub judgments: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub golden: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "input", value_name = "DIR", required = true)]
    pub inputs: Vec<PathBuf>,
}

/// A failed invocation.
#[derive(Debug)]
pub enum Failure {
    Usage(clap::Error),
    Runtime(crate::Error),
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            2
        }
        Err(Failure::Runtime(e)) => {
            let line = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            1
        }
    }
}
