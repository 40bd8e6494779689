use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Rotation-invariant random features for molecules and point clouds.
#[derive(Debug, Parser)]
#[command(name = "rotsig", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ROTSIG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the feature matrix of a dataset.
    Featurize(FeaturizeArgs),
    /// Fit a model over a regularization grid and save a bundle.
    Train(TrainArgs),
    /// Predict with a saved bundle.
    Predict(PredictArgs),
    /// Measure per-sample prediction latency.
    Benchmark(BenchmarkArgs),
    /// Train once per value of one hyperparameter.
    Sweep(SweepArgs),
    /// Run the numerical self-checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Xyz,
    Pointcloud,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RadialPreset {
    Qm7,
    Modelnet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Svd,
    Lsqr,
    Pcr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    #[value(name = "L")]
    L,
    Sigma,
    RadialScale,
    NFeatures,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    dataset: PathBuf,

    #[arg(long, value_enum, default_value_t = Format::Xyz)]
    format: Format,

    /// Center point clouds and scale them into the unit ball.
    #[arg(long)]
    unit_ball: bool,

    /// Per-element reference energies subtracted from molecular targets.
    #[arg(long)]
    reference_energies: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct FeatureArgs {
    #[arg(long, default_value_t = 5)]
    band_limit: usize,

    #[arg(long, default_value_t = 250)]
    n_features: usize,

    /// Standard deviation of the random weights.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,

    #[arg(long, value_enum, default_value_t = RadialPreset::Qm7, conflicts_with = "radial_spec")]
    radial_preset: RadialPreset,

    /// Gaussian radial functions as `center:width` pairs, comma separated.
    #[arg(long)]
    radial_spec: Option<String>,

    /// Multiplies every radial width.
    #[arg(long, default_value_t = 1.0)]
    radial_scale: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Weight each point by 1/N.
    #[arg(long)]
    normalize_mass: bool,

    /// Charge vocabulary for molecules, comma separated (default: charges
    /// present in the dataset).
    #[arg(long)]
    vocab: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct FitArgs {
    #[arg(long, value_enum, default_value_t = SolverArg::Svd)]
    solver: SolverArg,

    /// Comma-separated λ values (default: 1e-10 … 1e2, 13 points).
    #[arg(long)]
    lambda_grid: Option<String>,

    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,

    /// Seed of the split shuffle (default: --seed).
    #[arg(long)]
    split_seed: Option<u64>,

    /// Number of principal components kept by the PCR solver.
    #[arg(long)]
    pcr_rank: Option<usize>,

    #[arg(long, default_value_t = 1e-10)]
    lsqr_tol: f64,

    /// Iteration cap for LSQR and logistic regression.
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,

    /// Gradient tolerance of logistic regression.
    #[arg(long, default_value_t = 1e-6)]
    logistic_tol: f64,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    features: FeatureArgs,
    /// Feature matrix CSV; metadata goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Model bundle path.
    #[arg(long)]
    out: PathBuf,
    /// Per-λ report CSV (default: `<out>.report.csv`).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Validation and test predictions CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Bundle to time; required unless --synthetic is given.
    #[arg(long, required_unless_present = "synthetic")]
    bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Xyz)]
    format: Format,
    /// Time synthetic clouds of these sizes instead of a dataset.
    #[arg(long, conflicts_with = "dataset")]
    synthetic: Option<String>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Timings CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated values of the swept hyperparameter.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
    level: LevelArg,
    /// Report CSV (default: stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Negate odd-parity Wigner d entries to check that the suite notices.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.code())
        }
    }
}
