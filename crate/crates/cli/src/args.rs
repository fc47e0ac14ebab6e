use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guidedec::metrics::DEFAULT_NGRAM;
use guidedec::Strategy;

use crate::backend::BackendSpec;

#[derive(Debug, Parser)]
#[command(
    name = "guidedec",
    version,
    about = "Guided text generation through a sequence of guide phrases"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate texts for a task file or an inline prompt.
    Run(RunArgs),
    /// Show the scores behind a single decoding step.
    Inspect(InspectArgs),
    /// Recompute measures over run outputs and print a summary table.
    Eval(EvalArgs),
    /// Report how the two vocabularies overlap.
    Align(AlignArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Backend for both models: `toy:<fixture.json>` or `remote:<url>`.
    #[arg(long, value_name = "SPEC")]
    pub backend: Option<BackendSpec>,
    /// Backend for the autoregressive model; overrides --backend.
    #[arg(long, value_name = "SPEC")]
    pub ar_backend: Option<BackendSpec>,
    /// Backend for the masked model; overrides --backend.
    #[arg(long, value_name = "SPEC")]
    pub mlm_backend: Option<BackendSpec>,
    /// Server URL used by `remote` specs without one, and when no backend is given.
    #[arg(long, env = "GUIDEDEC_BACKEND_URL", value_name = "URL")]
    pub backend_url: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub backends: BackendArgs,
    /// Model used for perplexity; defaults to the AR model.
    #[arg(long, value_name = "SPEC")]
    pub scorer_backend: Option<BackendSpec>,
    /// JSON-lines task file.
    #[arg(long, value_name = "PATH")]
    pub tasks: Option<PathBuf>,
    /// Inline prompt instead of a task file.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Guide phrases for --prompt, comma separated or repeated.
    #[arg(long = "phrases", value_delimiter = ',', requires = "prompt")]
    pub phrases: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// One or more of ar, fusion, boost.
    #[arg(long, value_delimiter = ',', default_value = "boost")]
    pub strategy: Vec<Strategy>,
    /// Boost schedule slope; several values run one sweep each.
    #[arg(long, value_delimiter = ',', default_value = "0.3")]
    pub lambda0: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 90)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Base seed; sample n uses seed + n.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per task and strategy.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Include per-step diagnostics in every record.
    #[arg(long)]
    pub trace: bool,
    /// JSON object mapping word forms to lemmas, for phrase matching.
    #[arg(long, value_name = "PATH")]
    pub lemmas: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub backends: BackendArgs,
    /// Text generated so far, prompt included.
    #[arg(long)]
    pub context: String,
    /// Pending guide phrase.
    #[arg(long)]
    pub phrase: Option<String>,
    #[arg(long, default_value = "boost")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0.3)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// 1-based index of the step being scored.
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Step of the last phrase insertion.
    #[arg(long, default_value_t = 0)]
    pub last_insertion: usize,
    /// Rows in the printed table.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Write the top shared tokens, by AR score, to this CSV file.
    #[arg(long, value_name = "PATH")]
    pub dump_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 500, value_name = "N")]
    pub dump_top: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepUnit {
    Token,
    /// Normalized words of the generated text.
    Word,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Output files written by `run`.
    #[arg(long = "outputs", required = true, num_args = 1..)]
    pub outputs: Vec<PathBuf>,
    /// The task file the outputs came from.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Recompute perplexity with this model instead of using stored values.
    #[arg(long, value_name = "SPEC")]
    pub scorer_backend: Option<BackendSpec>,
    #[arg(long, default_value_t = DEFAULT_NGRAM)]
    pub ngram: usize,
    /// What the repetition n-grams are made of.
    #[arg(long, value_enum, default_value_t = RepUnit::Token)]
    pub rep_unit: RepUnit,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub lemmas: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub backends: BackendArgs,
}
