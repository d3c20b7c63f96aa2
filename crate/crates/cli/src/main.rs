//! `rbsvie`: solve reflected backward stochastic Volterra equations from a
//! TOML configuration and write machine-readable artifacts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Engine;

#[derive(Debug, Parser)]
#[command(name = "rbsvie", version, about = "Reflected BSVIE solvers and audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). `compare` takes it twice: lower, then upper.
    #[arg(long, global = true, value_name = "PATH")]
    config: Vec<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Solver engine; overrides the `engine` key.
    #[arg(long, global = true, value_enum)]
    engine: Option<Engine>,
    /// Largest N accepted by `oracle-check`.
    #[arg(long = "max-n", global = true, value_name = "INT")]
    max_n: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and write solution.json and y_diag.csv.
    Solve,
    /// Compare the solution with exhaustive stopping-rule enumeration.
    OracleCheck,
    /// Check Y_lo <= Y_hi for an ordered pair of configurations.
    Compare,
    /// Write the stopping frontier and the time-inconsistency report.
    Stop,
    /// Spot-check the Lipschitz, Hölder and domination assumptions.
    VerifyAssumptions,
}

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Config = 1,
    NoConvergence = 2,
    Verification = 3,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Status::Config as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let opts = commands::Options {
        configs: cli.config,
        out: cli.out,
        engine: cli.engine,
        max_n: cli.max_n,
    };
    let status = match cli.command {
        Command::Solve => commands::solve(&opts),
        Command::OracleCheck => commands::oracle_check(&opts),
        Command::Compare => commands::compare(&opts),
        Command::Stop => commands::stop(&opts),
        Command::VerifyAssumptions => commands::verify_assumptions(&opts),
    };
    ExitCode::from(status as u8)
}
