//! `slisemap` command-line interface.

mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use error::Failure;

#[derive(Debug, Parser)]
#[command(name = "slisemap", version, about = "Joint embeddings and local models for explaining supervised learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clustered regression dataset.
    Generate(GenerateArgs),
    /// Fit a solution to a CSV dataset.
    Fit(FitArgs),
    /// Add new items to a fitted solution.
    Add(AddArgs),
    /// Compute fidelity, coverage and purity for a solution.
    Metrics(MetricsArgs),
    /// Fit once per lambda_z and tabulate the metrics.
    Sweep(SweepArgs),
    /// Render the embedding as an SVG scatter plot.
    Plot(PlotArgs),
    /// Export Z and/or B as CSV.
    Export(ExportArgs),
    /// Re-run the command recorded in a manifest and compare the outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Number of items.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Number of covariates.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Number of clusters.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Standard deviation of the cluster centroids.
    #[arg(long, default_value_t = 0.25)]
    pub s: f64,
    /// Standard deviation of the response noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for data.csv, labels.csv, coefficients.csv and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
    BinaryLogit,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Target column(s); give one per class for class probabilities.
    #[arg(long, value_delimiter = ',', required_unless_present = "one_hot")]
    pub target: Vec<String>,
    /// Integer class column to one-hot encode as the target.
    #[arg(long, conflicts_with = "target")]
    pub one_hot: Option<String>,
    /// Number of classes for --one-hot.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Integer label column, excluded from the covariates.
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long, value_enum, default_value_t = Task::Regression)]
    pub task: Task,
    /// Fit on a seeded uniform subsample of this many rows.
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_lasso: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_outer_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub lbfgs_history: usize,
    #[arg(long, default_value_t = 500)]
    pub lbfgs_max_iters: usize,
    /// Stop the outer loop when an escape round improves the loss by less than this, relatively.
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Stop an L-BFGS run when a step improves the loss by less than this, relatively.
    #[arg(long, default_value_t = 1e-9)]
    pub lbfgs_rel_tol: f64,
    /// Skip the escape heuristic (a single optimization).
    #[arg(long)]
    pub no_escape: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_z: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Solution JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AddArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// CSV with the solution's covariate and target columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Integer class column to one-hot encode instead of the stored target columns.
    #[arg(long)]
    pub one_hot: Option<String>,
    /// Add each item on its own instead of jointly.
    #[arg(long)]
    pub one_by_one: bool,
    #[arg(long, default_value_t = 500)]
    pub lbfgs_max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub lbfgs_rel_tol: f64,
    /// CSV of the new items' Z rows, B rows and losses.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the enlarged solution JSON here.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Neighbourhood sizes; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', default_values_t = [25])]
    pub k: Vec<usize>,
    /// CSV with a `label` column (or a single column) of integer labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Quantile of the global model's losses used as the coverage threshold.
    #[arg(long, default_value_t = 0.3)]
    pub quantile: f64,
    /// Output prefix; writes PREFIX.json and PREFIX.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// lambda_z grid; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_z: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 25, 50])]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub quantile: f64,
    /// Label CSV for purity, instead of --label-column.
    #[arg(long, conflicts_with = "label_column")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Long-format CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the per-lambda_z solution files.
    #[arg(long)]
    pub save_solutions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// loss, label, or coefficient:NAME.
    #[arg(long, default_value = "loss")]
    pub color_by: String,
    /// Label CSV for --color-by label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write bar charts of k-means centroids of the local models here.
    #[arg(long)]
    pub clusters_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum What {
    #[value(name = "Z", alias = "z")]
    Z,
    #[value(name = "B", alias = "b")]
    B,
    #[value(alias = "Both")]
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, value_enum, default_value_t = What::Both)]
    pub what: What,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| {
            let level = match record.level() {
                log::Level::Warn => "warning".to_string(),
                other => other.as_str().to_lowercase(),
            };
            writeln!(buf, "{level}: {}", record.args())
        })
        .init();
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Add(a) => commands::add(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Plot(a) => commands::plot(&a),
        Command::Export(a) => commands::export(&a),
        Command::Replay(a) => commands::replay(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", Failure::usage(line.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
