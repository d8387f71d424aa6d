//! `entity-events`: batch pipelines for distantly supervised police-fatality
//! extraction — ingest, label, train (hard or EM), predict, evaluate,
//! bootstrap, rule baseline and synthetic data.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use entity_events::features::DEFAULT_DIM;
use entity_events::synthgen::DEFAULT_TEST_WINDOW;

#[derive(Debug, Parser)]
#[command(name = "entity-events", version, about = "Distantly supervised entity-event extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Load a documents file, dedup, clean and filter mentions.
    Ingest(IngestArgs),
    /// Impute mention labels from the training KB.
    Label(LabelArgs),
    /// Train logistic regression on hard distant labels.
    TrainHard(TrainArgs),
    /// Train the noisy-or disjunction model with EM.
    TrainEm(TrainEmArgs),
    /// Rank the entities of a test corpus.
    Predict(PredictArgs),
    /// Score a ranking against the in-window gold KB.
    Eval(EvalArgs),
    /// Bootstrap standard errors and paired significance tests.
    Bootstrap(BootstrapArgs),
    /// Evaluate the R1–R3 rule cascade over external event tuples.
    Baseline(BaselineArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    /// Documents JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Keyword lists (JSON with police_words and fatality_words).
    #[arg(long)]
    pub keywords: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FeatureArgs {
    /// Feature templates: all, ngram, dep, or a comma list such as N1,N2,D4.
    #[arg(long, default_value = "all")]
    pub templates: String,
    /// Hashed feature dimension.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GoldArgs {
    #[arg(long)]
    pub gold_train: PathBuf,
    #[arg(long)]
    pub gold_test: PathBuf,
    /// Inclusive incident-date range START..END.
    #[arg(long, default_value = DEFAULT_TEST_WINDOW)]
    pub test_window: String,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Also write the feature strings of every kept mention.
    #[arg(long)]
    pub dump_features: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub gold_train: PathBuf,
    /// name-only or name-and-loc.
    #[arg(long, default_value = "name-and-loc")]
    pub rule: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub gold_train: PathBuf,
    /// Hard labeling rule: name-only or name-and-loc.
    #[arg(long, default_value = "name-and-loc")]
    pub rule: String,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Inverse L2 regularization strength.
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainEmArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 100)]
    pub max_rounds: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Model file written by train-hard or train-em.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Templates used at training time; defaults to the model's metadata.
    #[arg(long)]
    pub templates: Option<String>,
    /// noisy-or, max, mean or sum.
    #[arg(long, default_value = "noisy-or")]
    pub strategy: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Predictions JSONL written by predict.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub gold: GoldArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    /// Model files to compare (repeat the flag); the first is reported on top.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub gold: GoldArgs,
    /// Templates used at training time; defaults to each model's metadata.
    #[arg(long)]
    pub templates: Option<String>,
    /// entities, documents or documents-dedup.
    #[arg(long, default_value = "entities")]
    pub scheme: String,
    /// auprc or max-f1.
    #[arg(long, default_value = "auprc")]
    pub metric: String,
    #[arg(long, default_value_t = 10_000)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    /// Event tuples JSONL.
    #[arg(long)]
    pub tuples: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub gold: GoldArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.3)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 0.36)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 0.6)]
    pub location_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub duplicate_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 inside `parse`.
    let cli = Cli::parse();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
