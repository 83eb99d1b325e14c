//! `distopt`: scenario-driven front end for the distributed optimization
//! toolkit. Subcommands validate scenario files, simulate trajectories,
//! sweep step sizes, and certify convergence rates and noise sensitivity.

pub mod commands;
pub mod csvio;
pub mod scenario;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    /// Built-in barrier solver.
    Internal,
    /// Command named by the DISTOPT_EXTERNAL_SDP environment variable.
    External,
}

#[derive(Parser)]
#[command(name = "distopt", version, about = "Distributed optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scenario file and report what it describes.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run trajectories and export per-run CSVs, a summary, and a chart.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Use a single seed instead of the scenario's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Ignore the scenario's noise model.
        #[arg(long)]
        noiseless: bool,
        /// Comma-separated subset of the scenario's algorithms.
        #[arg(long)]
        algorithms: Option<String>,
        /// Number of recorded steps (overrides the scenario horizon).
        #[arg(long = "T")]
        t: Option<usize>,
    },
    /// Certify rate and sensitivity across the scenario's step-size grid.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        algorithms: Option<String>,
        /// Also report the simulated fixed-point bias at each step size.
        #[arg(long)]
        bias: bool,
        #[arg(long, value_enum, default_value_t = SolverChoice::Internal)]
        solver: SolverChoice,
    },
    /// Certify rate and sensitivity at the scenario's step size.
    Certify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        algorithms: Option<String>,
        #[arg(long, value_enum, default_value_t = SolverChoice::Internal)]
        solver: SolverChoice,
    },
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Validate { scenario } => commands::cmd_validate(&scenario),
        Cmd::Simulate {
            scenario,
            out,
            seed,
            noiseless,
            algorithms,
            t,
        } => commands::cmd_simulate(&commands::SimulateArgs {
            scenario,
            out,
            seed,
            noiseless,
            algorithms,
            t,
        }),
        Cmd::Sweep {
            scenario,
            out,
            algorithms,
            bias,
            solver,
        } => commands::cmd_sweep(&commands::SweepArgs {
            scenario,
            out,
            algorithms,
            bias,
            solver,
        }),
        Cmd::Certify {
            scenario,
            out,
            algorithms,
            solver,
        } => commands::cmd_certify(&commands::CertifyArgs {
            scenario,
            out,
            algorithms,
            solver,
        }),
    };
    match result {
        Ok(()) => commands::EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
