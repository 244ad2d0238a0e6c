//! `ctxembed`: synthesize, ingest, factorize, train, evaluate and analyze.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxembed::data_model::Target;

#[derive(Parser, Debug)]
#[command(name = "ctxembed", version, about = "Context-aware player embeddings from match logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON file with command settings; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic match corpus with planted structure.
    Synth(SynthArgs),
    /// Validate a match CSV and summarize it.
    Ingest(IngestArgs),
    /// Fit embeddings on the training split of a match CSV.
    Factorize(FactorizeArgs),
    /// Train a decoder for one target.
    Train(TrainArgs),
    /// Score a trained decoder on the test split.
    Evaluate(EvaluateArgs),
    /// Write behavioral analysis tables.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub versions: Option<usize>,
    #[arg(long)]
    pub champions: Option<usize>,
    /// Planted rank.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub interaction_strength: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, conflicts_with = "rank_sweep")]
    pub rank: Option<usize>,
    /// Candidate ranks, as `lo..hi` (inclusive) or a comma-separated list.
    #[arg(long)]
    pub rank_sweep: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Target scored by the downstream sweep evaluator.
    #[arg(long)]
    pub target: Option<Target>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory written by `factorize`; required unless `--baseline`.
    #[arg(long)]
    pub factors: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub target: Option<Target>,
    /// Train the one-hot baseline instead of the embedding decoder.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub factors: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub target: Option<Target>,
    /// Also report the one-hot baseline, trained on the same split when no
    /// `model_baseline.json` sits next to the model.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub factors: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Rank squared activations against the squared norm when masking.
    #[arg(long)]
    pub squared_masking: bool,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Factorize(a) => commands::factorize(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
