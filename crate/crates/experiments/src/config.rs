//! Experiment configuration files.
//!
//! A config is a JSON object with a `kind` tag and an optional section per
//! experiment; every field has a default, so `{"kind": "sudoku"}` is a
//! complete config. Command-line flags override the file.
//!
//! ```json
//! {
//!   "kind": "sweep",
//!   "seed": 0,
//!   "workers": 2,
//!   "sweep": { "taus": [0.1, 1, 100], "epochs": 5 }
//! }
//! ```

use std::path::{Path, PathBuf};

use lpgd::envelope::{EnvelopeConfig, SweepLossMode};
use lpgd::pipeline::{Method, OptimizerConfig, OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Envelope,
    Sudoku,
    Sweep,
    QpBench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Envelope => "envelope",
            ExperimentKind::Sudoku => "sudoku",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::QpBench => "qp-bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Parallel jobs for sweeps.
    #[serde(default = "one")]
    pub workers: usize,
    /// Solver tolerance; overrides the tolerance of every section.
    #[serde(default)]
    pub tol: Option<f64>,
    /// Emit wall-clock columns. Off by default so that output files are
    /// byte-identical across runs.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub envelope: EnvelopeExperiment,
    #[serde(default)]
    pub sudoku: SudokuExperiment,
    #[serde(default)]
    pub sweep: SweepExperiment,
    #[serde(default)]
    pub qp_bench: QpBenchExperiment,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            out_dir: default_out_dir(),
            workers: 1,
            tol: None,
            timing: false,
            envelope: EnvelopeExperiment::default(),
            sudoku: SudokuExperiment::default(),
            sweep: SweepExperiment::default(),
            qp_bench: QpBenchExperiment::default(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)
            .map_err(|e| ExperimentError::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExperimentError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return bad(format!("tol must be positive, got {tol}"));
            }
        }
        match self.kind {
            ExperimentKind::Envelope => {
                let e = &self.envelope;
                if e.steps < 2 {
                    return bad("envelope.steps must be at least 2".into());
                }
                if e.configs.is_empty() {
                    return bad("envelope.configs must not be empty".into());
                }
                let n = e.c.len();
                if [e.direction.len(), e.target.len(), e.lo.len(), e.hi.len()]
                    .iter()
                    .any(|&l| l != n)
                {
                    return bad("envelope vectors must all have the length of c".into());
                }
                for cfg in &e.configs {
                    cfg.validate()?;
                }
            }
            ExperimentKind::Sudoku => {
                let s = &self.sudoku;
                if s.train_size == 0 {
                    return bad("sudoku.train_size must be at least 1".into());
                }
                if s.givens > 16 {
                    return bad("sudoku.givens must be at most 16".into());
                }
                if s.runs.is_empty() {
                    return bad("sudoku.runs must not be empty".into());
                }
                for (i, run) in s.runs.iter().enumerate() {
                    run.validate()?;
                    if s.runs[..i].iter().any(|r| r.method == run.method) {
                        return bad(format!("sudoku.runs lists {} twice", run.method.name()));
                    }
                }
            }
            ExperimentKind::Sweep => {
                let s = &self.sweep;
                for (name, grid) in [
                    ("taus", &s.taus),
                    ("rhos", &s.rhos),
                    ("alphas", &s.alphas),
                    ("epsilons", &s.epsilons),
                ] {
                    if grid.is_empty() {
                        return bad(format!("sweep.{name} must not be empty"));
                    }
                }
                if s.train_size == 0 || s.n == 0 || s.features == 0 {
                    return bad("sweep sizes must be positive".into());
                }
                if s.m >= s.n {
                    return bad("sweep.m must be smaller than sweep.n".into());
                }
                if !(s.quadratic >= 0.0) {
                    return bad("sweep.quadratic must be nonnegative".into());
                }
            }
            ExperimentKind::QpBench => {
                let q = &self.qp_bench;
                if q.instances == 0 || q.n == 0 {
                    return bad("qp_bench sizes must be positive".into());
                }
                if q.m >= q.n {
                    return bad("qp_bench.m must be smaller than qp_bench.n".into());
                }
            }
        }
        Ok(())
    }
}

/// Loss and envelope values along a line in cost space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeExperiment {
    pub c: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub direction: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
    /// Loss `weight / 2 * ||x - target||^2`.
    pub target: Vec<f64>,
    pub weight: f64,
    pub linearized: bool,
    pub configs: Vec<EnvelopeConfig>,
    pub tol: f64,
}

impl Default for EnvelopeExperiment {
    fn default() -> Self {
        Self {
            c: vec![0.0, -1.0],
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
            direction: vec![1.0, 0.0],
            t_min: -1.0,
            t_max: 1.0,
            steps: 201,
            target: vec![1.0, 1.0],
            weight: 1.0,
            linearized: true,
            configs: vec![
                EnvelopeConfig::lower(0.5),
                EnvelopeConfig::upper(0.5),
                EnvelopeConfig::average(0.5),
                EnvelopeConfig::average(0.5).with_rho(0.5),
            ],
            tol: 1e-9,
        }
    }
}

impl EnvelopeExperiment {
    pub fn mode(&self) -> SweepLossMode {
        if self.linearized {
            SweepLossMode::Linearized
        } else {
            SweepLossMode::Exact
        }
    }
}

/// Learning the rules of 4x4 Sudoku.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SudokuExperiment {
    pub train_size: usize,
    pub test_size: usize,
    pub givens: usize,
    /// Rows of the learned constraint matrix.
    pub constraints: usize,
    /// Standard deviation of the initial constraint matrix entries.
    pub init_scale: f64,
    /// One trace per run, written to `<method>.csv`.
    pub runs: Vec<TrainConfig>,
}

impl Default for SudokuExperiment {
    fn default() -> Self {
        Self {
            train_size: 200,
            test_size: 50,
            givens: 8,
            constraints: 40,
            init_scale: 1.0,
            runs: vec![sudoku_lpgd_run(), sudoku_gd_run()],
        }
    }
}

/// LPGD with the averaged envelope; tau = 1e4, rho = 0.1, lr = 0.1.
pub fn sudoku_lpgd_run() -> TrainConfig {
    let mut cfg = TrainConfig::new(
        Method::LpgdAverage,
        EnvelopeConfig::average(1e4).with_rho(0.1),
        OptimizerConfig::adam(0.1),
    );
    cfg.epochs = 30;
    cfg.solver_tol = 1e-6;
    cfg.solver_max_iters = 20_000;
    cfg
}

/// Implicit-differentiation baseline; rho = 1e-3, lr = 0.1.
pub fn sudoku_gd_run() -> TrainConfig {
    let mut cfg = TrainConfig::new(
        Method::Implicit,
        EnvelopeConfig::lower(1.0).with_rho(1e-3),
        OptimizerConfig::adam(0.1),
    );
    cfg.epochs = 30;
    cfg.solver_tol = 1e-6;
    cfg.solver_max_iters = 20_000;
    cfg
}

/// Hyperparameter grid on a synthetic cost-learning task: an affine
/// backbone maps features to the cost of a box LP with equality
/// constraints, and is trained to reproduce the solutions of a hidden
/// ground-truth backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepExperiment {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub taus: Vec<f64>,
    pub rhos: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Solver tolerances.
    pub epsilons: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub n: usize,
    /// Equality constraints; the first one fixes the number of selected
    /// items to `n / 2`.
    pub m: usize,
    pub features: usize,
    /// Weight of an optional `quadratic / 2 * ||x||^2` term; `0` keeps the
    /// layer a linear program.
    pub quadratic: f64,
}

impl Default for SweepExperiment {
    fn default() -> Self {
        Self {
            method: Method::LpgdAverage,
            optimizer: OptimizerKind::Adam,
            taus: vec![100.0],
            rhos: vec![0.0],
            alphas: vec![0.01],
            epsilons: vec![1e-4],
            epochs: 10,
            batch_size: 8,
            train_size: 64,
            test_size: 16,
            n: 8,
            m: 1,
            features: 4,
            quadratic: 0.0,
        }
    }
}

/// Cold versus warm-started solves of the backward problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpBenchExperiment {
    pub instances: usize,
    pub n: usize,
    pub m: usize,
    /// Perturbation size of the backward problem.
    pub tau: f64,
    pub tol: f64,
}

impl Default for QpBenchExperiment {
    fn default() -> Self {
        Self {
            instances: 50,
            n: 30,
            m: 5,
            tau: 0.1,
            tol: 1e-6,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_configs_parse() {
        for kind in ["envelope", "sudoku", "sweep", "qp-bench"] {
            let cfg = ExperimentConfig::from_json_str(&format!(r#"{{"kind": "{kind}"}}"#)).unwrap();
            assert_eq!(cfg.kind.name(), kind);
        }
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::new(ExperimentKind::Sudoku);
        let back = ExperimentConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_fields_and_empty_grids() {
        assert!(ExperimentConfig::from_json_str(r#"{"kind": "sweep", "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"kind": "sweep", "sweep": {"taus": []}}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"kind": "nope"}"#).is_err());
    }
}
