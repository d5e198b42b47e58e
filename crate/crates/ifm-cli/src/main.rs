mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ifm::mi::{BnGrouping, ObjectiveForm};
use ifm::train::UpdateMode;

/// Texture-bias experiments: build shiftedMNIST, train with or without the
/// layer-pair information regularizer, and score checkpoints.
#[derive(Debug, Parser)]
#[command(name = "ifm", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed (data seed for build-data, all three seeds for train).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Composite MNIST digits over textures and write the three splits.
    BuildData(BuildDataArgs),
    /// Train a classifier; `--lambda-ifm 0` is the baseline.
    Train(TrainArgs),
    /// Score one checkpoint on one split.
    Eval(EvalArgs),
    /// Tabulate results beside the published numbers.
    Report(ReportArgs),
    /// Check the estimator on correlated Gaussians against quadrature.
    MiSanity(MiSanityArgs),
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    /// Directory with the MNIST IDX files.
    #[arg(long)]
    pub mnist: Option<PathBuf>,
    /// `procedural` or a directory of at least ten texture images.
    #[arg(long)]
    pub textures: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Built dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lambda_ifm: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub pairs_per_image: Option<usize>,
    /// `standard` or `paper_literal`.
    #[arg(long)]
    pub objective_form: Option<ObjectiveForm>,
    /// `pooled` or `per_distribution`.
    #[arg(long)]
    pub bn_grouping: Option<BnGrouping>,
    /// `joint` or `alternating`.
    #[arg(long)]
    pub update_mode: Option<UpdateMode>,
    /// Train on the first N training examples only.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Validate on the first N validation examples only.
    #[arg(long)]
    pub val_limit: Option<usize>,
    /// Train and log discriminators even when lambda is 0.
    #[arg(long)]
    pub ifm_reporting: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Built dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `train`, `val` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Row label; derived from the checkpoint when omitted.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories; their best-digit and best-texture checkpoints are scored.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// CSV files written by `eval`.
    #[arg(long, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Built dataset directory (needed with --runs).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Append the published numbers.
    #[arg(long)]
    pub with_paper_refs: bool,
    /// Append the invertible-network literature row.
    #[arg(long)]
    pub with_literature: bool,
}

#[derive(Debug, Args)]
pub struct MiSanityArgs {
    /// Correlations to test.
    #[arg(long, num_args = 1.., default_values_t = [0.0, 0.5, 0.9], allow_negative_numbers = true)]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 50_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1_000)]
    pub steps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.shared.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("IFM_LOG")
        .init();
    let result = config::RunConfig::load(cli.shared.config.as_deref()).and_then(|cfg| {
        let s = &cli.shared;
        match &cli.command {
            Command::BuildData(a) => commands::build_data(cfg, s.seed, s.out.as_deref(), a),
            Command::Train(a) => commands::train(cfg, s.seed, s.out.as_deref(), a),
            Command::Eval(a) => commands::eval(cfg, s.out.as_deref(), a),
            Command::Report(a) => commands::report(cfg, s.out.as_deref(), a),
            Command::MiSanity(a) => commands::mi_sanity(s.seed.unwrap_or(0), a),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ifm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
