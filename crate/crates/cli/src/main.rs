//! `airlens`: fetch air-quality histories, run Instructor-Worker analyses,
//! score generated texts, estimate costs and emit plot data.

mod analyze;
mod cost;
mod data;
mod error;
mod evaluate;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "airlens", version, about = "Instructor-Worker LLM analysis of air-quality histories")]
struct Cli {
    /// Seed for every randomized behavior (mock latencies, synthetic data, embeddings).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Fixed "now" (RFC 3339) used for timestamps and live data windows.
    #[arg(long, global = true)]
    clock: Option<DateTime<Utc>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download an hourly history from the air-quality service into a fixture file.
    Fetch(FetchArgs),
    /// Write a synthetic wildfire-episode fixture (and optionally its replay script).
    Synth(SynthArgs),
    /// Run an analysis and write the artifact directory.
    Analyze(AnalyzeArgs),
    /// Score generated texts against references with BERTScore.
    Evaluate(EvaluateArgs),
    /// Estimate LLM and data-API costs.
    Cost(CostArgs),
    /// Emit tidy CSVs for time-series and boxplot figures.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lng: f64,
    #[arg(long, default_value_t = 720)]
    pub hours: u32,
    /// Exclusive end of the window (defaults to the last UTC midnight before --clock or now).
    #[arg(long)]
    pub end: Option<DateTime<Utc>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, allow_hyphen_values = true, default_value_t = 34.0725)]
    pub lat: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -118.5445)]
    pub lng: f64,
    #[arg(long, default_value_t = 720)]
    pub hours: usize,
    #[arg(long, default_value = "2025-01-09T00:00:00Z")]
    pub start: DateTime<Utc>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the reference replay script for this history.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    #[value(alias = "trend-analysis")]
    Trend,
    #[value(alias = "health-recommendation")]
    Health,
    #[value(alias = "policy-report")]
    Policy,
    #[value(name = "numerical-summary", alias = "numerical")]
    NumericalSummary,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Recorded history to analyze (required unless --live).
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Replay script for the models (defaults to the reference script built from the fixture).
    #[arg(long, conflicts_with = "live")]
    pub script: Option<PathBuf>,
    /// Call real model endpoints (and the live data service when no fixture is given).
    #[arg(long)]
    pub live: bool,
    #[arg(long, value_enum, default_value_t = TaskArg::Trend)]
    pub task: TaskArg,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Target day of a health recommendation.
    #[arg(long)]
    pub date: Option<NaiveDate>,
    /// Population class of a health recommendation.
    #[arg(long)]
    pub class: Option<String>,
    /// Stack the wildfire context preset on top of the base prompts.
    #[arg(long)]
    pub refined: bool,
    #[arg(long, default_value = "wildfire-la")]
    pub preset: String,
    /// Override the location (defaults to the fixture's).
    #[arg(long, allow_hyphen_values = true, requires = "lng")]
    pub lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "lat")]
    pub lng: Option<f64>,
    /// Hours to analyze (defaults to the fixture span, or 720 live).
    #[arg(long)]
    pub hours: Option<u32>,
    #[arg(long, default_value = "gpt-4.1")]
    pub instructor_model: String,
    #[arg(long, default_value = "gpt-4.1")]
    pub worker_model: String,
    #[arg(long, default_value = "gpt-4.1")]
    pub coder_model: String,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    /// Maximum mock latency in milliseconds; 0 disables jitter.
    #[arg(long, default_value_t = 10)]
    pub jitter_ms: u64,
    /// Accept trailing partial days instead of requiring exactly 720 hours.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderArg {
    Hash,
    Http,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON-lines generations: {"iteration", "day", "population_class", "text"}.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Second generation set (e.g. refined prompts) compared against the first.
    #[arg(long)]
    pub variant: Option<PathBuf>,
    /// Directory of reference texts named `<day>_<population_class>.txt`.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long, value_enum, default_value_t = EmbedderArg::Hash)]
    pub embedder: EmbedderArg,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 30)]
    pub chunks: u32,
    /// Worker model id from the pricing table.
    #[arg(long, default_value = "gpt41")]
    pub model: String,
    /// Instructor model id (defaults to --model).
    #[arg(long)]
    pub instructor_model: Option<String>,
    #[arg(long, default_value_t = 25_000)]
    pub input_tokens: u64,
    #[arg(long, default_value_t = 200)]
    pub output_tokens: u64,
    /// Fraction of input tokens billed at the cached rate.
    #[arg(long, default_value_t = 0.0)]
    pub cached_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub data_calls: u64,
    /// Bill data-API overage in whole blocks of 1,000 calls.
    #[arg(long)]
    pub bucketed: bool,
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Scores CSV produced by `evaluate`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn now(cli_clock: Option<DateTime<Utc>>) -> DateTime<Utc> {
    cli_clock.unwrap_or_else(Utc::now)
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    let clock = now(cli.clock);
    match cli.command {
        Command::Fetch(a) => data::fetch(a, clock, cli.clock.is_some()).await,
        Command::Synth(a) => data::synth(a, cli.seed, cli.clock),
        Command::Analyze(a) => analyze::run(a, cli.seed).await,
        Command::Evaluate(a) => evaluate::run(a, cli.seed).await,
        Command::Cost(a) => cost::run(a),
        Command::Plotdata(a) => data::plotdata(a),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
