//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gridtopo::alm::UpdateRule;
use gridtopo::models::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "gridtopo", version, about = "Estimate grid admittance matrices from power measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate measurements for a grid and write them as CSV.
    Simulate(SimulateArgs),
    /// Estimate G and B̃ from a measurement file.
    Estimate(EstimateArgs),
    /// Compare estimated matrices against a reference case.
    Eval(EvalArgs),
    /// Repeated simulate, estimate and evaluate over an SNR grid.
    Montecarlo(MonteCarloArgs),
    /// Support sizes, support agreement and magnitude ratio of case files.
    CaseStats(CaseStatsArgs),
    /// Solve the same problem with the projected-gradient reference solver.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Case CSV, or `ieee14` / `ieee33` for the bundled cases.
    #[arg(long, default_value = "ieee33", conflicts_with = "random_buses")]
    pub case: String,
    /// Draw a random connected grid with this many buses instead of a case.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub random_buses: Option<u64>,
    /// Chords added to the random spanning tree.
    #[arg(long, default_value_t = 0, requires = "random_buses")]
    pub extra_edges: usize,
    /// Probability that a random line carries conductance.
    #[arg(long, default_value_t = 1.0, requires = "random_buses")]
    pub overlap: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// JSON file with any of rho, lambda_g, lambda_b, max_iters, eps, jitter, seed.
    #[arg(long = "solver-config")]
    pub solver_config: Option<PathBuf>,
    /// Penalty parameter, relative to the mean curvature unless --absolute-rho.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub absolute_rho: bool,
    #[arg(long)]
    pub lambda_g: Option<f64>,
    #[arg(long)]
    pub lambda_b: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iters: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Divide squared changes by the previous iterate norm (default) or not.
    #[arg(long)]
    pub unnormalized_stop: bool,
    /// Skip the final off-diagonal thresholding.
    #[arg(long)]
    pub no_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RuleArg {
    ActiveSet,
    Masked,
}

impl From<RuleArg> for UpdateRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::ActiveSet => UpdateRule::ActiveSet,
            RuleArg::Masked => UpdateRule::Masked,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    /// Noise variance, `R_η = σ²I`.
    #[arg(long, conflicts_with = "noise")]
    pub sigma2: Option<f64>,
    /// Noise covariance matrix CSV.
    #[arg(long)]
    pub noise: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "dlpf")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 800, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibrate σ² from the SNR but add no noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    /// Model the measurement file is declared to follow.
    #[arg(long)]
    pub model: ModelKind,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Reference case CSV or bundled case name.
    #[arg(long)]
    pub case: String,
    /// Directory holding `g_hat.csv` and `b_hat.csv`.
    #[arg(long, required_unless_present = "b")]
    pub estimate: Option<PathBuf>,
    #[arg(long, conflicts_with = "estimate")]
    pub g: Option<PathBuf>,
    #[arg(long, conflicts_with = "estimate")]
    pub b: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MonteCarloArgs {
    /// Experiment JSON; replaces the experiment flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Model generating the data.
    #[arg(long, default_value = "dlpf")]
    pub model: ModelKind,
    /// Comma-separated estimator models; defaults to every compatible one.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40", allow_negative_numbers = true)]
    pub snr_db: Vec<f64>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 800, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    /// Top-level seed; trial `t` uses `seed + t`. Falls back to the solver config, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Worker threads, 0 for one per core. `GRIDTOPO_THREADS` takes precedence.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Also render median MSE(B̃) against SNR as SVG.
    #[arg(long)]
    pub svg: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CaseStatsArgs {
    /// Case CSVs or bundled names; defaults to both bundled cases.
    #[arg(long)]
    pub case: Vec<String>,
    /// Also write the table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub lambda_g: Option<f64>,
    #[arg(long)]
    pub lambda_b: Option<f64>,
    #[arg(long, default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iters: u64,
    /// Relative objective decrease that stops the iteration.
    #[arg(long, default_value_t = 1e-12)]
    pub eps: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
