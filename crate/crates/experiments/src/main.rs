//! `lpgd-exp`: run an experiment and write its CSV/JSON results.
//!
//! Every flag can also be set through an `LPGD_`-prefixed environment
//! variable (`LPGD_CONFIG`, `LPGD_OUT`, `LPGD_SEED`, `LPGD_WORKERS`,
//! `LPGD_TOL`, `LPGD_TIMING`). Flags and variables override the config file.
//!
//! Exit status: 0 on success, 1 on runtime errors, 2 on config errors and
//! 3 when a training run diverged (its partial trace is still written).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lpgd_experiments::{run_experiment, ExperimentConfig, ExperimentError, ExperimentKind};

#[derive(Debug, Parser)]
#[command(name = "lpgd-exp", version, about = "Desk-scale LPGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; its `kind` must match the subcommand.
    #[arg(long, global = true, env = "LPGD_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "LPGD_OUT")]
    out: Option<PathBuf>,

    #[arg(long, global = true, env = "LPGD_SEED")]
    seed: Option<u64>,

    /// Parallel jobs for sweeps.
    #[arg(long, global = true, env = "LPGD_WORKERS")]
    workers: Option<usize>,

    /// Solver tolerance for every solve of the experiment.
    #[arg(long, global = true, env = "LPGD_TOL")]
    tol: Option<f64>,

    /// Record wall-clock times (makes outputs non-reproducible).
    #[arg(long, global = true, env = "LPGD_TIMING")]
    timing: bool,

    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Loss and envelopes along a line in cost space.
    Envelope,
    /// Learn the rules of 4x4 Sudoku.
    Sudoku,
    /// Hyperparameter grid on a synthetic cost-learning task.
    Sweep,
    /// Cold versus warm-started backward solves.
    QpBench,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Envelope => ExperimentKind::Envelope,
            Command::Sudoku => ExperimentKind::Sudoku,
            Command::Sweep => ExperimentKind::Sweep,
            Command::QpBench => ExperimentKind::QpBench,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let kind = cli.command.kind();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        return Err(ExperimentError::Config(format!(
            "config is for `{}` but the subcommand is `{}`",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cli.tol.is_some() {
        cfg.tol = cli.tol;
    }
    cfg.timing |= cli.timing;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        println!("{}", cfg.to_json_string());
        return ExitCode::SUCCESS;
    }
    let result = run_experiment(&cfg).with_context(|| format!("{} experiment failed", cfg.kind.name()));
    match result {
        Ok(outcome) => {
            for file in &outcome.files {
                println!("{}", file.display());
            }
            if outcome.succeeded() {
                ExitCode::SUCCESS
            } else {
                for failure in &outcome.failures {
                    eprintln!("diverged: {failure}");
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(e.downcast_ref(), Some(ExperimentError::Config(_)));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
