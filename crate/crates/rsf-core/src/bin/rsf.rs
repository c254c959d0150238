//! Command-line driver for scenario files.
//!
//! Exit codes: 0 success, 2 parse error, 3 validation error, 4 runtime
//! failure (including failed compare verdicts). Errors are written to stderr
//! as a single JSON line; progress and summaries go to stdout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rsf_core::scenario::{self, Overrides, RunOutput, ScenarioError};

#[derive(Parser)]
#[command(
    name = "rsf",
    about = "Reduced-field dynamics: kinetic equations, Fock-space oracles, \
             thermal baths, polarization chains",
    version
)]
struct Cli {
    /// Directory for output files (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Deviation threshold or positivity tolerance override.
    #[arg(long, global = true, value_name = "X")]
    tol: Option<f64>,
    /// Sampling seed override for compatibility certification.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run any scenario file, dispatching on its "kind".
    Run { file: PathBuf },
    /// Run a "compare" scenario: full Fock integration vs the reduced
    /// equations, with a PASS/FAIL verdict.
    Compare { file: PathBuf },
    /// Parse and validate a scenario file without running it.
    Validate { file: PathBuf },
    /// Run a "polarization" scenario: push a Stokes state through a chain
    /// of devices.
    DeviceChain { file: PathBuf },
    /// Report entropy and particle number of a state file or an "entropy"
    /// scenario.
    Entropy { file: PathBuf },
}

fn dispatch(cli: &Cli) -> Result<Option<RunOutput>, ScenarioError> {
    let overrides = Overrides {
        out_dir: cli.out.clone(),
        tol: cli.tol,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Run { file } => scenario::run(file, &overrides).map(Some),
        Command::Compare { file } => scenario::compare(file, &overrides).map(Some),
        Command::Validate { file } => {
            let parsed = scenario::load(file)?;
            println!("valid: kind \"{}\"", parsed.kind);
            Ok(None)
        }
        Command::DeviceChain { file } => scenario::device_chain(file, &overrides).map(Some),
        Command::Entropy { file } => scenario::entropy_report(file, &overrides).map(Some),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Some(output)) => {
            println!("{}", output.summary);
            for file in &output.files {
                println!("wrote {}", file.display());
            }
            if output.verdict_failed {
                let err = ScenarioError::Runtime("compare verdict failed".into());
                eprintln!("{}", err.report());
                return ExitCode::from(err.exit_code() as u8);
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.report());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
