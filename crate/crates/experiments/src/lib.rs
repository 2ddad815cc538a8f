//! Desk-scale experiments built on the `lpgd` crate: envelope
//! visualization, mini-Sudoku rule learning, hyperparameter sweeps on a
//! synthetic cost-learning task, and a warm-start solver benchmark.

pub mod config;
pub mod dataset;
pub mod error;
pub mod run;
pub mod sudoku_task;
pub mod synthetic;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{ExperimentError, Result};
pub use run::{run_experiment, RunOutcome};
