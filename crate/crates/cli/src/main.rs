use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use majorant_cli::report::{fill_rates, write_csv};
use majorant_cli::run::write_constants_csv;
use majorant_cli::{run_constants, run_convergence, run_estimate, CliError, RunConfig, DEFAULT_CONFIG};

/// Guaranteed error bounds for parabolic reaction-diffusion problems.
///
/// Exit codes: 0 success, 2 configuration error, 3 violated hypothesis
/// (the bounds would not be guaranteed), 1 other failures.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Print the default configuration with every key documented and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute all bounds for one configuration and write the JSON report.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Report path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a refinement ladder and write the CSV table with rates.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form constants of a cell shape with the eigenvalue oracle.
    Constants {
        #[arg(long, value_parser = ["rect", "box", "tri"])]
        shape: String,
        /// rect: h1 h2; box: h1 h2 h3; tri: leg h or x1 y1 x2 y2 x3 y3.
        #[arg(allow_negative_numbers = true)]
        dims: Vec<f64>,
        #[arg(long, default_value_t = majorant_core::constants::ORACLE_GRID)]
        oracle_grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => Ok(Box::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?)),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_default_config {
        print!("{DEFAULT_CONFIG}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Estimate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let est = run_estimate(&cfg)?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &est.report).map_err(io_err)?;
            writeln!(w).map_err(io_err)?;
        }
        Command::Convergence { config, levels, out } => {
            let cfg = RunConfig::load(&config)?;
            let runs = run_convergence(&cfg, levels)?;
            let mut rows: Vec<_> = runs.into_iter().map(|e| e.row).collect();
            fill_rates(&mut rows);
            write_csv(&rows, output(out.as_deref())?).map_err(io_err)?;
        }
        Command::Constants { shape, dims, oracle_grid, out } => {
            let rows = run_constants(&shape, &dims, oracle_grid)?;
            write_constants_csv(&rows, output(out.as_deref())?).map_err(io_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
