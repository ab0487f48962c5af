//! `cavtomo`: simulate cavity-sweep datasets, reconstruct the sideband
//! covariance matrix from them, analyze the result, and emit figure data.

mod commands;
mod config;
mod error;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use cavity_tomography::covariance::Param;
use clap::{Parser, Subcommand};

use crate::commands::{AnalyzeArgs, FitArgs, SimulateArgs};
use crate::config::RunConfig;
use crate::error::{exit, CliError, CliResult};
use crate::reproduce::Figure;

#[derive(Debug, Parser)]
#[command(name = "cavtomo", version, about, after_help = EXIT_CODES)]
struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

const EXIT_CODES: &str = "Exit codes: 0 success, 1 other error, 2 configuration, 3 I/O or malformed data, \
4 fit did not converge, 5 parameters not identifiable, 6 unphysical state or analysis failure";

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate sweep datasets (CSV plus JSON metadata) for each acquisition.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        /// Analysis frequency in Hz.
        #[arg(long)]
        omega_hz: Option<f64>,
        /// Write exact expectation values instead of sampled moments, plus
        /// the model curves.
        #[arg(long)]
        noiseless: bool,
        /// Samples averaged per sweep point.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Reconstruct the covariance parameters from trace CSVs.
    Fit {
        /// Trace CSVs, each with a JSON metadata file of the same stem.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Hold a parameter fixed, e.g. `--pin mu=10.1`. Repeatable.
        #[arg(long = "pin", value_parser = parse_pin)]
        pins: Vec<(Param, f64)>,
        /// Co-fit cavity dip and bandwidth.
        #[arg(long)]
        fit_cavities: bool,
        /// Ignore per-point variances.
        #[arg(long)]
        uniform: bool,
    },
    /// Physicality, purity, entanglement tests, loss correction and frame
    /// rotation for a parameter set or fit result.
    Analyze {
        /// Covariance parameters or a fit result JSON.
        params: PathBuf,
        /// Standard deviations, if not contained in the fit result.
        #[arg(long)]
        std: Option<PathBuf>,
        /// Detection efficiency for loss correction [default: 0.61].
        #[arg(long)]
        efficiency: Option<f64>,
        /// Also refer a measured squeezing level (dB) back through the loss.
        #[arg(long, allow_hyphen_values = true)]
        squeezing_db: Option<f64>,
    },
    /// Write the data behind one of the standard figures.
    Reproduce {
        figure: Figure,
        #[arg(long)]
        omega_hz: Option<f64>,
    },
}

fn parse_pin(s: &str) -> Result<(Param, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let param: Param = name.trim().parse().map_err(|e: cavity_tomography::Error| e.to_string())?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    if !value.is_finite() {
        return Err(format!("pinned value must be finite, got {value}"));
    }
    Ok((param, value))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate { seed, omega_hz, noiseless, samples } => {
            let args = SimulateArgs { seed, noiseless, samples, omega_hz };
            for path in commands::simulate(&config, &args, &cli.out)? {
                println!("{}", path.display());
            }
        }
        Command::Fit { traces, pins, fit_cavities, uniform } => {
            let args = FitArgs { traces, pins, fit_cavities, uniform };
            let result = commands::fit_traces(&config, &args, &cli.out)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            println!(
                "fitted {} parameters, residual norm {:.6e}; wrote {}",
                result.free.len(),
                result.residual_norm,
                cli.out.join("fit_result.json").display()
            );
        }
        Command::Analyze { params, std, efficiency, squeezing_db } => {
            let args = AnalyzeArgs { params, std, efficiency, squeezing_db };
            let (_, summary) = commands::analyze_params(&config, &args, &cli.out)?;
            print!("{summary}");
        }
        Command::Reproduce { figure, omega_hz } => {
            for path in reproduce::reproduce(&config, figure, omega_hz, &cli.out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
