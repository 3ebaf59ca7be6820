//! `cme` — compressed mixed-effects models from the command line: simulate
//! benchmark scenarios, fit models to CSV data, predict, select fixed
//! effects, run the sampler-correctness test, and aggregate report tables.

mod commands;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use cme_core::Error;

#[derive(Parser)]
#[command(name = "cme", version, about = "Compressed mixed-effects model fitting and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Structured key-value config file (TOML).
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "cme-out")]
    out_dir: std::path::PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation scenarios and write per-replication metrics.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// True covariance structures (comma separated: diagonal, block-diagonal, toeplitz).
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<String>,
        /// Observations per subject (comma separated).
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        /// Row-compression dimensions (comma separated).
        #[arg(long, value_delimiter = ',')]
        k1: Vec<usize>,
        /// Column-compression dimensions (comma separated).
        #[arg(long, value_delimiter = ',')]
        k2: Vec<usize>,
        /// Replications per scenario.
        #[arg(long)]
        reps: Option<usize>,
        /// Fixed-effects design distribution: independent or toeplitz.
        #[arg(long)]
        x_design: Option<String>,
        /// Gibbs iterations per fit.
        #[arg(long)]
        iterations: Option<usize>,
        /// Burn-in iterations to discard.
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Fit the compressed model (or the oracle baseline) to a CSV dataset.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Input CSV (long format, or riboflavin-style with --riboflavin).
        #[arg(long)]
        data: std::path::PathBuf,
        /// Build the intercept + standardized-genes + B-spline design.
        #[arg(long)]
        riboflavin: bool,
        /// Fit the oracle baseline instead (requires --sigma0).
        #[arg(long)]
        oracle: bool,
        /// Known random-effects covariance (headerless square CSV).
        #[arg(long)]
        sigma0: Option<std::path::PathBuf>,
        /// Subject-level train/test split: train on this many subjects and
        /// write the held-out subjects next to the draws.
        #[arg(long)]
        train_subjects: Option<usize>,
    },
    /// Posterior-predictive draws for a test CSV from stored draws.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding a previous fit's draws.
        #[arg(long)]
        draws: std::path::PathBuf,
        /// Test CSV (same schema as the fit input; response optional).
        #[arg(long)]
        data: std::path::PathBuf,
        /// Treat the test CSV as riboflavin-style.
        #[arg(long)]
        riboflavin: bool,
        /// Predict from an oracle fit (requires --sigma0).
        #[arg(long)]
        oracle: bool,
        /// Known random-effects covariance (headerless square CSV).
        #[arg(long)]
        sigma0: Option<std::path::PathBuf>,
    },
    /// Sequential 2-means selection on stored beta draws.
    Select {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding a previous fit's draws.
        #[arg(long)]
        draws: std::path::PathBuf,
        /// Clustering tolerance; derived from the draws when omitted.
        #[arg(long)]
        tol_b: Option<f64>,
    },
    /// Joint-distribution sampler correctness test.
    Geweke {
        #[command(flatten)]
        common: CommonArgs,
        /// Samples per arm.
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Sweeps between recorded samples in the successive arm.
        #[arg(long, default_value_t = 3)]
        thin: usize,
        /// Inverse-gamma shape for the error-variance prior.
        #[arg(long, default_value_t = 3.0)]
        a0: f64,
        /// Inverse-gamma scale for the error-variance prior.
        #[arg(long, default_value_t = 3.0)]
        b0: f64,
        /// Fail (exit 3) when any |z| exceeds this threshold.
        #[arg(long)]
        fail_above: Option<f64>,
    },
    /// Aggregate a metrics CSV into report tables.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Metrics CSV produced by `simulate`.
        #[arg(long)]
        metrics: std::path::PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            emit_error("usage", &e.to_string());
            std::process::exit(1);
        }
    };

    let outcome = match cli.command {
        Command::Simulate { common, sigma, m, k1, k2, reps, x_design, iterations, burn_in } => {
            commands::simulate(common, sigma, m, k1, k2, reps, x_design, iterations, burn_in)
        }
        Command::Fit { common, data, riboflavin, oracle, sigma0, train_subjects } => {
            commands::fit(common, data, riboflavin, oracle, sigma0, train_subjects)
        }
        Command::Predict { common, draws, data, riboflavin, oracle, sigma0 } => {
            commands::predict(common, draws, data, riboflavin, oracle, sigma0)
        }
        Command::Select { common, draws, tol_b } => commands::select(common, draws, tol_b),
        Command::Geweke { common, samples, thin, a0, b0, fail_above } => {
            commands::geweke(common, samples, thin, a0, b0, fail_above)
        }
        Command::Report { common, metrics } => commands::report(common, metrics),
    };

    if let Err(e) = outcome {
        let (kind, code) = classify(&e);
        emit_error(kind, &e.to_string());
        std::process::exit(code);
    }
}

fn classify(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Config(_) => ("usage", 1),
        Error::Data(_) | Error::Validation(_) | Error::Dimension(_) => ("data", 2),
        Error::Numeric(_) => ("numeric", 3),
    }
}

/// One machine-readable JSON line on stderr.
fn emit_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
}
