//! Command-line front end: ingest plant data, calibrate the production and
//! forecast-error models, solve selling strategies, and run batch
//! simulations. All unit conversions happen here so the core library works
//! on normalized power and plain hours throughout.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) on
// purpose: they must reject NaN, which the un-negated form lets through.
// Index loops that step several arrays in lockstep keep the index.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod commands;
mod config;
mod data;
mod tensor;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Classified failures with the documented exit codes: 2 for input or
/// configuration problems, 3 for calibration/solver failures, 4 when the
/// finite-difference scheme cannot satisfy its stability bounds.
#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Fit(String),
    Cfl(String),
    Other(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Cfl(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Parse(m) | CliError::Fit(m) | CliError::Cfl(m) => m.clone(),
            CliError::Other(e) => format!("{e:#}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(format!("i/o error: {e}"))
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThetaMode {
    Parametric,
    Nonparametric,
}

#[derive(Parser)]
#[command(
    name = "windtrade",
    version,
    about = "Calibrate a wind-production selling model and evaluate trading strategies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the truncated log-normal production law to a power time series.
    FitProduction {
        /// CSV with header `timestamp,power` (RFC 3339 UTC, kW).
        #[arg(long)]
        data: PathBuf,
        /// Rated plant power in kW; production is normalized by it.
        #[arg(long)]
        rated_power_kw: f64,
        /// Keep every k-th row (1 keeps everything).
        #[arg(long, default_value_t = 1)]
        subsample: usize,
        /// Output file for the fitted parameters (TOML).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the forecast-error variance schedule from provider forecasts.
    FitTheta {
        /// CSV with header `issue_time,target_time,forecast` (kW).
        #[arg(long)]
        forecasts: PathBuf,
        /// Production CSV used to realize each forecast target.
        #[arg(long)]
        production: PathBuf,
        /// Fitted production parameters from fit-production.
        #[arg(long)]
        production_params: PathBuf,
        #[arg(long)]
        rated_power_kw: f64,
        #[arg(long, value_enum)]
        mode: ThetaMode,
        /// Horizon bucket width for the empirical variances.
        #[arg(long, default_value_t = 6.0)]
        bucket_hours: f64,
        /// Buckets with fewer observations are dropped with a warning.
        #[arg(long, default_value_t = 30)]
        min_per_bucket: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a strategy offline and write its artifacts.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// One of: exact, no_forecast, thresholds, hjb.
        #[arg(long)]
        policy: String,
        /// Value tensor output (hjb only), flat binary plus manifest.
        #[arg(long)]
        out_grid: Option<PathBuf>,
        /// Policy output: rate tensor for hjb, threshold tables otherwise.
        #[arg(long)]
        out_policy: Option<PathBuf>,
        /// Known terminal production for policy=exact.
        #[arg(long)]
        f_terminal: Option<f64>,
    },
    /// Simulate a strategy over random forecast paths.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        /// Overrides [simulate] n_paths from the config.
        #[arg(long)]
        n_paths: Option<usize>,
        /// Overrides [simulate] seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-path records CSV; the summary goes to stdout.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::FitProduction {
            data,
            rated_power_kw,
            subsample,
            out,
        } => commands::fit_production(&data, rated_power_kw, subsample, &out),
        Cmd::FitTheta {
            forecasts,
            production,
            production_params,
            rated_power_kw,
            mode,
            bucket_hours,
            min_per_bucket,
            out,
        } => commands::fit_theta(
            &forecasts,
            &production,
            &production_params,
            rated_power_kw,
            mode,
            bucket_hours,
            min_per_bucket,
            &out,
        ),
        Cmd::Solve {
            config,
            policy,
            out_grid,
            out_policy,
            f_terminal,
        } => commands::solve(
            &config,
            &policy,
            out_grid.as_deref(),
            out_policy.as_deref(),
            f_terminal,
        ),
        Cmd::Simulate {
            config,
            policy,
            n_paths,
            seed,
            out,
        } => commands::simulate(&config, &policy, n_paths, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
