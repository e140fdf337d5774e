//! `skdv`: runs experiment files and compares their reports.
//!
//! Every subcommand except `compare` takes one TOML experiment file. The
//! per-kind subcommands insist that the file holds only experiments of that
//! kind; `run` accepts any mix. The worker count comes from `SKDV_WORKERS`.
//! Failures print a JSON object with a machine-readable `code` on stderr and
//! exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use skdv_core::experiment::{compare_reports, run, ExperimentConfig, Report};
use skdv_core::Error;

const WORKERS_VAR: &str = "SKDV_WORKERS";

#[derive(Parser)]
#[command(
    name = "skdv",
    version,
    about = "Spectral laboratory for the stochastic periodic KdV equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in the file.
    Run { config: PathBuf },
    /// Picard solves of the mild formulation.
    Simulate { config: PathBuf },
    /// White-noise samples and Brownian families.
    SampleNoise { config: PathBuf },
    /// Monte Carlo statistics of the stochastic convolution.
    StochasticConvolution { config: PathBuf },
    /// Norms of a single field.
    Norm { config: PathBuf },
    /// Empirical constants of the multilinear estimates.
    VerifyEstimates { config: PathBuf },
    /// Distances between truncated solutions.
    ConvergenceStudy { config: PathBuf },
    /// Relative differences between two `summary.json` reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Relative difference above which a scalar is flagged.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
}

#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
    exit: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::Config { .. } => 2,
            _ => 1,
        };
        Failure {
            code: e.code(),
            message: e.to_string(),
            exit,
        }
    }
}

fn workers() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure {
                code: "invalid_environment",
                message: format!("{WORKERS_VAR} must be a positive integer, got {v:?}"),
                exit: 2,
            }),
        },
    }
}

fn run_file(path: &Path, kind: Option<&str>) -> Result<serde_json::Value, Failure> {
    let config = ExperimentConfig::from_file(path)?;
    if let Some(kind) = kind {
        if let Some((i, e)) = config
            .experiments
            .iter()
            .enumerate()
            .find(|(_, e)| e.kind() != kind)
        {
            return Err(Error::Config {
                path: format!("experiment[{i}].kind"),
                reason: format!("`{kind}` runs only {kind} experiments, found {}", e.kind()),
            }
            .into());
        }
    }
    let summary = run(&config, workers()?)?;
    let cells: Vec<_> = summary
        .reports
        .iter()
        .map(|r| json!({ "index": r.index, "kind": r.kind, "status": r.status, "failure": r.failure }))
        .collect();
    let out =
        json!({ "dir": summary.dir, "config_hash": summary.manifest.config_hash, "cells": cells });
    let failed = summary.failures();
    if let Some((index, f)) = failed.first() {
        return Err(Failure {
            code: "cell_failed",
            message: format!(
                "{} of {} cells failed; first: experiment[{index}] {}: {}",
                failed.len(),
                cells.len(),
                f.code,
                f.message
            ),
            exit: 1,
        });
    }
    Ok(out)
}

fn compare(a: &Path, b: &Path, tolerance: f64) -> Result<serde_json::Value, Failure> {
    let ra = Report::from_file(a)?;
    let rb = Report::from_file(b)?;
    let diff = compare_reports(&ra, &rb, tolerance)?;
    Ok(serde_json::to_value(diff).expect("diff serializes"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run_file(config, None),
        Command::Simulate { config } => run_file(config, Some("simulate")),
        Command::SampleNoise { config } => run_file(config, Some("sample-noise")),
        Command::StochasticConvolution { config } => {
            run_file(config, Some("stochastic-convolution"))
        }
        Command::Norm { config } => run_file(config, Some("norm")),
        Command::VerifyEstimates { config } => run_file(config, Some("verify-estimates")),
        Command::ConvergenceStudy { config } => run_file(config, Some("convergence-study")),
        Command::Compare { a, b, tolerance } => compare(a, b, *tolerance),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!(
                "{}",
                json!({ "error": { "code": f.code, "message": f.message } })
            );
            ExitCode::from(f.exit)
        }
    }
}
