mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spline_dpd::models::ModelKind;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Spline-LUT digital predistortion experiments.
#[derive(Debug, Parser)]
#[command(name = "spline-dpd", version)]
struct Cli {
    /// Experiment configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set model=sph --set mu_q=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Directory receiving all artifacts.
    #[arg(long, global = true, env = "SPLINE_DPD_OUT", default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a PAPR-limited OFDM payload at the configured drive level.
    Generate {
        /// Payload seed; defaults to `seed` from the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "signal")]
        name: String,
    },
    /// Run indirect learning and write the model and training log.
    Train,
    /// Measure EVM, ACLR and PAPR at the PA output, with or without a model.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Signal file from `generate`; defaults to a fresh payload with `eval_seed`.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Multiplications and FLOPs per sample.
    Complexity {
        /// Omit to print the reference parameterizations of all three models.
        #[arg(long)]
        kind: Option<ModelKind>,
        #[arg(short = 'P', long, requires = "kind")]
        order: Option<usize>,
        #[arg(short = 'M', long, requires = "kind")]
        memory: Option<usize>,
        #[arg(long)]
        control_points: Option<usize>,
        #[arg(long)]
        knot_spacing: Option<f64>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

fn run(cli: Cli) -> Result<()> {
    let load = || ExperimentConfig::load(cli.config.as_deref(), &cli.overrides);
    match cli.command {
        Command::Generate { seed, ref name } => {
            commands::generate(&load()?, &cli.out_dir, name, seed)?;
        }
        Command::Train => {
            commands::train(&load()?, &cli.out_dir)?;
        }
        Command::Evaluate {
            ref model,
            ref signal,
            ref name,
        } => {
            commands::evaluate(
                &load()?,
                &cli.out_dir,
                model.as_deref(),
                signal.as_deref(),
                name,
            )?;
        }
        Command::Complexity {
            kind,
            order,
            memory,
            control_points,
            knot_spacing,
            ref out,
        } => {
            let rows = match kind {
                Some(kind) => {
                    let (p, m) = match kind {
                        ModelKind::Sph => (3, 3),
                        ModelKind::Smp => (3, 4),
                        ModelKind::Mp => (11, 4),
                    };
                    let spline = kind != ModelKind::Mp;
                    vec![(
                        kind,
                        order.unwrap_or(p),
                        memory.unwrap_or(m),
                        control_points.or(spline.then_some(7)),
                        knot_spacing.or(spline.then_some(1.0)),
                    )]
                }
                None => vec![
                    (ModelKind::Sph, 3, 3, Some(7), Some(1.0)),
                    (ModelKind::Smp, 3, 4, Some(7), Some(1.0)),
                    (ModelKind::Mp, 11, 4, None, None),
                ],
            };
            let table = commands::complexity(&rows)?;
            print!("{table}");
            if let Some(path) = out {
                artifacts::write_atomic(path, table.as_bytes())?;
            }
        }
        Command::Selftest => {
            let failed = commands::selftest();
            if failed > 0 {
                return Err(CliError::SelfTest(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
