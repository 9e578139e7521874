//! Command-line surface for flow-based manifold learning and OOD detection.
//!
//! Anything that affects results lives in the config file or in output
//! headers; flags select paths and modes. Exit codes: 0 success, 1 usage or
//! configuration problems, 2 numeric/runtime failures.

mod commands;

use clap::{Parser, Subcommand};
use oodflow::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "oodflow", version, about = "Normalizing flows on the data manifold for OOD detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes a checkpoint and a loss
    /// history CSV.
    Train {
        /// Config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the penalty scale on held-out in-distribution data and write a
    /// calibration report.
    FitScale {
        #[arg(long)]
        checkpoint: PathBuf,
        /// In-distribution data (tensor container).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Numerator of the penalty weight lambda = C / scale.
        #[arg(long, default_value_t = 1.0)]
        c_const: f64,
    },
    /// Score a dataset; writes one CSV row per sample.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibration report from fit-scale.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the compression complexity term.
        #[arg(long)]
        no_ic: bool,
        /// Override the calibration report's C constant.
        #[arg(long)]
        c_const: Option<f64>,
    },
    /// Evaluate AUROC and hard-threshold counts from score CSVs.
    Eval {
        /// Score CSV of in-distribution data.
        #[arg(long)]
        id: PathBuf,
        /// Score CSV(s) of out-of-distribution data (repeatable).
        #[arg(long, required = true)]
        ood: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export an (x, y, nll, penalty, score) grid for a D=2 model.
    Grid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Square bounds as lo,hi for both axes.
        #[arg(long, allow_hyphen_values = true)]
        bounds: String,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
        /// Calibration report; without it the score column uses the
        /// training-time lambda.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Draw samples from a trained model into a tensor container.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        /// `full` or `manifold`.
        #[arg(long, default_value = "full")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate or ingest datasets (tensor container plus metadata sidecar).
    GenData {
        #[command(subcommand)]
        source: GenDataSource,
    },
}

#[derive(Subcommand)]
enum GenDataSource {
    /// Noisy semicircle in R^2.
    Semicircle {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// `uniform` or `concentrated`.
        #[arg(long, default_value = "concentrated")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random linear (optionally smooth) embedding of a d-dimensional
    /// Gaussian into R^D plus isotropic noise.
    Embedded {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long = "dim")]
        dim: usize,
        /// `none` or `smooth`.
        #[arg(long, default_value = "none")]
        nonlinearity: String,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert an IDX image file (pixels scale to [0,1], images flatten).
    Idx {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Format(_) | Error::Eval(_) => 1,
        Error::Numeric(_) | Error::Training(_) | Error::Degenerate(_) | Error::Io(_) => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::FitScale {
            checkpoint,
            data,
            out,
            c_const,
        } => commands::fit_scale(&checkpoint, &data, &out, c_const),
        Command::Score {
            checkpoint,
            calibration,
            data,
            out,
            no_ic,
            c_const,
        } => commands::score(&checkpoint, &calibration, &data, &out, no_ic, c_const),
        Command::Eval { id, ood, out } => commands::eval(&id, &ood, &out),
        Command::Grid {
            checkpoint,
            bounds,
            step,
            out,
            calibration,
        } => commands::grid(&checkpoint, &bounds, step, &out, calibration.as_deref()),
        Command::Sample {
            checkpoint,
            n,
            mode,
            seed,
            out,
        } => commands::sample(&checkpoint, n, &mode, seed, &out),
        Command::GenData { source } => match source {
            GenDataSource::Semicircle {
                n,
                noise,
                profile,
                seed,
                out,
            } => commands::gen_semicircle(n, noise, &profile, seed, &out),
            GenDataSource::Embedded {
                n,
                d,
                dim,
                nonlinearity,
                noise,
                seed,
                out,
            } => commands::gen_embedded(n, d, dim, &nonlinearity, noise, seed, &out),
            GenDataSource::Idx { input, out } => commands::gen_idx(&input, &out),
        },
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
