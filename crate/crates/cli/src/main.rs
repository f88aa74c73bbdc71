//! `widelearn`: train RBMs, fit covariances, build Gram matrices, fit and
//! evaluate one-vs-one RLS, and run whole experiments from a flat config.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use widelearn_core::WideMode;

#[derive(Debug, Parser)]
#[command(
    name = "widelearn",
    version,
    about = "Covariance arc-cosine kernels learned by wide learning"
)]
struct Cli {
    /// Log more (repeat for debug output); `RUST_LOG` overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset conversion.
    #[command(subcommand)]
    Data(DataCommand),
    /// RBM training.
    #[command(subcommand)]
    Rbm(RbmCommand),
    /// Covariance fitting.
    #[command(subcommand)]
    Sigma(SigmaCommand),
    /// Gram matrix construction.
    #[command(subcommand)]
    Gram(GramCommand),
    /// One-vs-one RLS training.
    #[command(subcommand)]
    Rls(RlsCommand),
    /// Test error of a trained RLS model on a Gram container.
    Eval(EvalArgs),
    /// Full experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Finite- vs infinite-width learning curve.
    Curve(CurveArgs),
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Convert IDX or text data to a dataset container.
    Convert(ConvertArgs),
}

#[derive(Debug, Subcommand)]
enum RbmCommand {
    /// Train an RBM with CD-p; writes `rbm.wkrn`.
    Train(RbmTrainArgs),
}

#[derive(Debug, Subcommand)]
enum SigmaCommand {
    /// Fit `Σ` from RBM weights (inexact) or by stochastic learning (exact); writes `sigma.wkrn`.
    Fit(SigmaFitArgs),
}

#[derive(Debug, Subcommand)]
enum GramCommand {
    /// Build training (and cross) Gram matrices; writes `gram.wkrn`.
    Build(GramBuildArgs),
}

#[derive(Debug, Subcommand)]
enum RlsCommand {
    /// Select λ on a held-out split and fit on all rows; writes `rls.wkrn`.
    Train(RlsTrainArgs),
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Run the whole pipeline and write `report.txt` / `report.csv`.
    Run(ExperimentArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides every seed key of the command.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long, value_name = "PATH", requires = "labels", conflicts_with = "text")]
    images: Option<PathBuf>,
    /// IDX label file matching `--images`.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Whitespace-separated matrix, label in the last column.
    #[arg(long, value_name = "PATH", required_unless_present = "images")]
    text: Option<PathBuf>,
    /// The text matrix has no label column.
    #[arg(long, requires = "text")]
    unlabeled: bool,
    /// Keep a stratified subsample of N rows.
    #[arg(long, value_name = "N")]
    subsample: Option<usize>,
    /// Output file name inside `--out`, without extension.
    #[arg(long, default_value = "data")]
    name: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RbmTrainArgs {
    /// Training data: a dataset container or a text matrix.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Train on a stratified subsample of N rows.
    #[arg(long, value_name = "N")]
    subsample: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SigmaFitArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Inexact)]
    mode: ModeArg,
    /// RBM container (inexact mode).
    #[arg(long, value_name = "PATH")]
    rbm: Option<PathBuf>,
    /// Training data (exact mode).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Learn on a stratified subsample of N rows (exact mode).
    #[arg(long, value_name = "N")]
    subsample: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct GramBuildArgs {
    /// Training data.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Test data; adds the test × train cross-Gram.
    #[arg(long, value_name = "PATH")]
    test: Option<PathBuf>,
    /// Covariance container; the identity when omitted.
    #[arg(long, value_name = "PATH")]
    sigma: Option<PathBuf>,
    /// Identity layers composed on top of the base kernel.
    #[arg(long, value_name = "L")]
    layers: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RlsTrainArgs {
    /// Gram container from `gram build`.
    #[arg(long, value_name = "PATH")]
    gram: PathBuf,
    /// Candidate λ values (relative to the mean Gram diagonal by default).
    #[arg(long, value_name = "CSV")]
    lambda_grid: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Gram container holding `cross` and `test_labels`.
    #[arg(long, value_name = "PATH")]
    gram: PathBuf,
    /// RLS container from `rls train`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Also write `eval.txt` here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Stratified training subsample size.
    #[arg(long, value_name = "N")]
    subsample: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Composition depths to evaluate, e.g. `0,5,25`.
    #[arg(long, value_name = "L")]
    layers: Option<String>,
    #[arg(long, value_name = "CSV")]
    lambda_grid: Option<String>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct CurveArgs {
    /// RBM epochs at which both models are evaluated, e.g. `0,1,2,5,10`.
    #[arg(long, value_name = "CSV")]
    checkpoints: Option<String>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModeArg {
    Exact,
    Inexact,
}

impl From<ModeArg> for WideMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => WideMode::Exact,
            ModeArg::Inexact => WideMode::Inexact,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
