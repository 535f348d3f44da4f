//! Command-line driver for twin experiments with the copula rank histogram
//! filter and its baselines.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod demo;
mod run;
mod summarize;

use config::{ConfigFile, Overrides};

/// Something a command could not do. `Usage` means the invocation or its
/// configuration is wrong (exit 2); `Runtime` means the work itself failed
/// (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "corhf",
    version,
    about = "Ensemble data assimilation twin experiments: copula rank histogram \
             filter and baselines on the Lorenz '63 and '96 systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment from a TOML description; writes a per-step
    /// results CSV plus a JSON manifest named by the config digest.
    Run(RunArgs),
    /// Write prior/analysis scatter data for a demonstration scenario.
    Demo(DemoArgs),
    /// Aggregate results CSVs into mean and stddev RMSE per filter and
    /// ensemble size.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the config's filter list (repeatable).
    #[arg(long = "filter", value_name = "NAME")]
    filters: Vec<String>,
    /// Replaces the config's ensemble size list (repeatable).
    #[arg(long = "n-ens", value_name = "N")]
    n_ens: Vec<usize>,
    /// Replaces the config's trial count.
    #[arg(long = "n-trials", value_name = "N")]
    n_trials: Option<usize>,
    /// Replaces the config's step count.
    #[arg(long = "n-steps", value_name = "N")]
    n_steps: Option<usize>,
    /// Replaces the config's copula bandwidth multiplier.
    #[arg(long)]
    alpha: Option<f64>,
    /// Replaces the config's localization radius.
    #[arg(long = "r-loc", value_name = "RADIUS")]
    r_loc: Option<f64>,
    /// Trials to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, env = "CORHF_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Scenario name: normal-beta or scalar.
    scenario: String,
    /// Filter to run the update with.
    #[arg(long, default_value = "corhf")]
    filter: String,
    /// Members in the prior and analysis clouds.
    #[arg(long = "n-ens", value_name = "N", default_value_t = 100)]
    n_ens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "CORHF_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Results CSV paths or glob patterns.
    #[arg(required = true, value_name = "RESULTS")]
    results: Vec<PathBuf>,
    /// Write summary.csv into this directory instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Demo(args) => {
            demo::cmd_demo(&args.scenario, &args.filter, args.n_ens, args.seed, &args.out).map(
                |files| {
                    println!("observed y = {:?}", files.observations);
                    println!("wrote {}", files.prior_path.display());
                    println!("wrote {}", files.analysis_path.display());
                },
            )
        }
        Command::Summarize(args) => summarize::cmd_summarize(&args.results, args.out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut config = ConfigFile::load(&args.config).map_err(Failure::Usage)?;
    config.apply(&Overrides {
        seed: args.seed,
        filters: args.filters,
        n_ens: args.n_ens,
        n_trials: args.n_trials,
        n_steps: args.n_steps,
        alpha: args.alpha,
        r_loc: args.r_loc,
    });
    let output = run::cmd_run(&config, args.jobs, &args.out)?;
    println!("wrote {}", output.results_path.display());
    println!("wrote {}", output.manifest_path.display());
    if output.failures.is_empty() {
        return Ok(());
    }
    for f in &output.failures {
        eprintln!(
            "trial {} {} (n_ens {}) failed at step {}: {}",
            f.trial, f.filter, f.n_ens, f.step, f.message
        );
    }
    Err(Failure::Runtime(format!(
        "{} filter run(s) failed; details recorded in the manifest",
        output.failures.len()
    )))
}
