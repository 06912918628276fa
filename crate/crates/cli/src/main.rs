mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitgp_core::ErrorClass;

use crate::config::UsageError;

/// Divide-and-conquer Bayesian kernel machine regression.
#[derive(Parser)]
#[command(name = "splitgp", version, about)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SPLITGP_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the data, sample every subset and combine.
    #[command(after_help = config::keys_help())]
    Fit(FitArgs),
    /// Run the synthetic benchmark over sample sizes and split exponents.
    Simulate(SimulateArgs),
    /// Re-combine the draws of an existing fit.
    Combine(CombineArgs),
    /// Extract an exposure-response surface from an existing fit.
    Surface(SurfaceArgs),
}

/// Model flags shared by `fit` and `simulate`; each overrides its config key.
#[derive(Args, Default)]
struct ModelFlags {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// isotropic | ard
    #[arg(long)]
    kernel: Option<String>,
    /// barycenter | sinkhorn | median
    #[arg(long)]
    method: Option<String>,
    /// Absolute Sinkhorn regularization.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Any other config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split exponent t; K = round(n^t).
    #[arg(long)]
    splits_exponent: Option<f64>,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "512")]
    n_list: String,
    /// Comma-separated split exponents in [0, 0.7].
    #[arg(long, default_value = "0")]
    t_list: String,
    #[arg(long)]
    reps: Option<usize>,
    /// 300 replications and 10^4 iterations (burn-in 5000, thin 5).
    #[arg(long)]
    paper_scale: bool,
    /// Number of exposures.
    #[arg(long, default_value_t = 4)]
    q: usize,
    /// Read the confounder's spread as a standard deviation.
    #[arg(long)]
    confounder_sd: bool,
    /// Print the cells and seeds without fitting.
    #[arg(long)]
    dry_run: bool,
    /// Output directory.
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CombineArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    run: PathBuf,
    /// barycenter | sinkhorn | median
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Other combine or surface keys, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for combined/ and summary/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    run: PathBuf,
    /// uni | bi
    #[arg(long = "type", default_value = "uni")]
    kind: String,
    /// One exposure (uni) or two (bi), by 1-based index or name.
    #[arg(long)]
    exposures: String,
    #[arg(long)]
    grid: Option<usize>,
    /// Quantile at which the other exposures are held.
    #[arg(long)]
    fix: Option<f64>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<splitgp_core::Error>() {
            return match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    let outcome = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Combine(a) => commands::combine(a),
        Command::Surface(a) => commands::surface(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
