mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Weighting;

/// Transported mediated-effect grids and their heterogeneity.
#[derive(Debug, Parser)]
#[command(name = "transhet", version)]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the (outcome site × mediator site) grid of log relative risks.
    Estimate(EstimateArgs),
    /// Split a grid's variability into outcome- and mediator-related parts.
    Decompose(DecomposeArgs),
    /// Run the five-site simulation study, or emit one simulated dataset.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target site label.
    #[arg(long)]
    pub target: Option<u32>,
    /// Comma-separated mediator-source sites (grid columns).
    #[arg(long, value_delimiter = ',')]
    pub mediator_sources: Option<Vec<u32>>,
    /// Comma-separated outcome-source sites (grid rows).
    #[arg(long, value_delimiter = ',')]
    pub outcome_sources: Option<Vec<u32>>,
    /// gcomp, weighting, wreg or onestep.
    #[arg(long)]
    pub estimator: Option<String>,
    /// super-learner, main-terms, interactions or intercept.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub truncation: Option<f64>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    pub crossfit: Option<usize>,
    /// Clamp θ̂ into (0, 1) before taking logs.
    #[arg(long)]
    pub clamp_theta: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid JSON written by `estimate`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub weights: Option<Weighting>,
    /// Also fit the crossed random-effects model.
    #[arg(long)]
    pub re_model: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Outcome site k₀ whose effect shifts the summary.
    #[arg(long)]
    pub anchor_outcome: Option<u32>,
    /// Mediator site p₀ whose effect shifts the summary.
    #[arg(long)]
    pub anchor_mediator: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML study configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub crossfit: Option<usize>,
    #[arg(long)]
    pub clamp_theta: bool,
    /// Fit the random-effects model in every replication (on by default).
    #[arg(long, conflicts_with = "no_re_model")]
    pub re_model: bool,
    #[arg(long)]
    pub no_re_model: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Write one simulated dataset instead of running the study.
    #[arg(long)]
    pub emit_data: bool,
    /// Records in the emitted dataset.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Replication index whose dataset is emitted.
    #[arg(long, default_value_t = 0)]
    pub replication: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start {w} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
