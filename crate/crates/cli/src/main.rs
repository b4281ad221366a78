//! `switchfactor`: simulate, fit, detect and evaluate factor models with
//! regime-switching loadings.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod detect;
mod eval;
mod fit;
mod io;
mod plot;
mod simulate;
mod table1;

#[derive(Parser)]
#[command(name = "switchfactor", version, about = "Factor models with regime-switching loadings")]
struct Cli {
    /// Worker threads for restarts and Monte Carlo replications [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML config file; each subcommand reads its own section and flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel and write it with the true states, factors and loadings
    Simulate(simulate::SimulateArgs),
    /// Fit the static or Markov-switching model by EM
    Fit(fit::FitArgs),
    /// Date turning points from regime probabilities, or in real time from a panel
    Detect(detect::DetectArgs),
    /// Compare a fit directory against a simulation directory
    Eval(eval::EvalArgs),
    /// Run a Monte Carlo grid and write one summary row per cell
    Table1(table1::Table1Args),
    /// Emit CSV and SVG series for probability paths and histograms
    Plotdata(plot::PlotArgs),
}

/// How a successful run ended.
pub enum Status {
    Done,
    /// Outputs were written but no restart met the tolerance.
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<switchfactor::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a, cfg),
        Command::Fit(a) => fit::run(a, cfg),
        Command::Detect(a) => detect::run(a, cfg),
        Command::Eval(a) => eval::run(a),
        Command::Table1(a) => table1::run(a, cfg),
        Command::Plotdata(a) => plot::run(a),
    };
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: no restart converged; outputs hold the best attempt");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
