//! Dispatch of an [`ExperimentConfig`] to its experiment and emission of
//! the result files.
//!
//! Every experiment writes its CSV files plus `summary.json` into the output
//! directory. With `timing` off, all files are a pure function of the
//! config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lpgd::envelope::{envelope_sweep, SweepSpec};
use lpgd::format::fmt_float;
use lpgd::pipeline::{train, LearnableParams, Sample, TraceSummary, TrainConfig, TrainData};
use lpgd::{solve, EnvelopeConfig, ProblemParameters, SolverSettings};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, QpBenchExperiment, SweepExperiment};
use crate::dataset::generate_sudoku_dataset;
use crate::error::{ExperimentError, Result};
use crate::{sudoku_task, synthetic};

pub const SUMMARY_FILE: &str = "summary.json";
pub const ENVELOPE_FILE: &str = "envelope.csv";
pub const QP_BENCH_FILE: &str = "qp_bench.csv";
pub const QP_BENCH_HEADER: &str = "instance,forward_iters,cold_iters,warm_iters,cold_s,warm_s";

/// Files written by a run and the training runs that did not finish.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// `"<run id>: <reason>"` per diverged or failed training run.
    pub failures: Vec<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'static str,
    seed: u64,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    stats: serde_json::Value,
    config: &'a ExperimentConfig,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|source| ExperimentError::Io {
        path: out.clone(),
        source,
    })?;
    let (files, runs, stats) = match cfg.kind {
        ExperimentKind::Envelope => run_envelope(cfg)?,
        ExperimentKind::Sudoku => run_sudoku(cfg)?,
        ExperimentKind::Sweep => run_sweep(cfg)?,
        ExperimentKind::QpBench => run_qp_bench(cfg)?,
    };
    let failures = runs
        .iter()
        .filter_map(|r| {
            let reason = r
                .error
                .clone()
                .or_else(|| r.trace.as_ref().and_then(|t| t.diverged.clone()))?;
            Some(format!("{}: {reason}", r.id))
        })
        .collect();
    let summary = Summary {
        kind: cfg.kind.name(),
        seed: cfg.seed,
        files: files.iter().map(|f| f.display().to_string()).collect(),
        runs,
        stats,
        config: cfg,
    };
    let summary_path = write(out, SUMMARY_FILE, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let mut files: Vec<PathBuf> = files.iter().map(|f| out.join(f)).collect();
    files.push(summary_path);
    Ok(RunOutcome { files, failures })
}

type Emitted = (Vec<PathBuf>, Vec<RunSummary>, serde_json::Value);

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ExperimentError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn run_envelope(cfg: &ExperimentConfig) -> Result<Emitted> {
    let e = &cfg.envelope;
    let v = |x: &[f64]| DVector::from_column_slice(x);
    let base = ProblemParameters::box_lp(v(&e.c), v(&e.lo), v(&e.hi));
    let spec = SweepSpec {
        direction: v(&e.direction),
        t_min: e.t_min,
        t_max: e.t_max,
        steps: e.steps,
        target: v(&e.target),
        weight: e.weight,
        mode: e.mode(),
        configs: e.configs.clone(),
    };
    let settings = SolverSettings::with_tol(cfg.tol.unwrap_or(e.tol));
    let table = envelope_sweep(&base, &spec, &settings)?;
    write(&cfg.out_dir, ENVELOPE_FILE, &table.to_csv())?;
    let stats = serde_json::json!({ "rows": table.rows.len(), "columns": table.header() });
    Ok((vec![ENVELOPE_FILE.into()], Vec::new(), stats))
}

/// A named training job over shared data.
struct Job {
    id: String,
    config: TrainConfig,
}

fn run_jobs(
    cfg: &ExperimentConfig,
    jobs: &[Job],
    data: &TrainData<'_>,
    layer: &LearnableParams,
) -> Result<(Vec<PathBuf>, Vec<RunSummary>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|job| train(data, layer.clone(), &job.config))
            .collect()
    });
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(trace) => {
                let name = format!("{}.csv", job.id);
                write(&cfg.out_dir, &name, &trace.to_csv(cfg.timing))?;
                files.push(PathBuf::from(name));
                runs.push(RunSummary {
                    id: job.id.clone(),
                    trace: Some(trace.summary(cfg.timing)),
                    error: None,
                });
            }
            Err(e) => runs.push(RunSummary {
                id: job.id.clone(),
                trace: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok((files, runs))
}

/// Dataset seeds derived from the experiment seed; the training runs use
/// the experiment seed itself for shuffling.
fn sub_seed(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

fn run_sudoku(cfg: &ExperimentConfig) -> Result<Emitted> {
    let s = &cfg.sudoku;
    let samples = |count, offset| -> Vec<Sample> {
        generate_sudoku_dataset(count, s.givens, sub_seed(cfg.seed, offset))
            .iter()
            .map(|inst| inst.to_sample())
            .collect()
    };
    let train_set = samples(s.train_size, 1);
    let test_set = samples(s.test_size, 2);
    let layer = sudoku_task::initial_layer(s.constraints, s.init_scale, sub_seed(cfg.seed, 3));
    let jobs: Vec<Job> = s
        .runs
        .iter()
        .map(|run| {
            let mut config = run.clone();
            config.seed = cfg.seed;
            if let Some(tol) = cfg.tol {
                config.solver_tol = tol;
            }
            Job {
                id: run.method.name().to_string(),
                config,
            }
        })
        .collect();
    let data = TrainData {
        train: &train_set,
        test: &test_set,
        sudoku_metrics: true,
    };
    let (files, runs) = run_jobs(cfg, &jobs, &data, &layer)?;
    Ok((files, runs, serde_json::Value::Null))
}

/// `{method}_tau{tau}_rho{rho}_alpha{alpha}_eps{eps}`.
pub fn sweep_job_id(config: &TrainConfig) -> String {
    format!(
        "{}_tau{}_rho{}_alpha{}_eps{}",
        config.method.name(),
        config.envelope.tau,
        config.envelope.rho,
        config.optimizer.learning_rate,
        config.solver_tol
    )
}

/// The grid in row-major order (tau slowest, epsilon fastest).
pub fn sweep_grid(s: &SweepExperiment, seed: u64, tol_override: Option<f64>) -> Vec<TrainConfig> {
    let epsilons = match tol_override {
        Some(tol) => vec![tol],
        None => s.epsilons.clone(),
    };
    let mut grid = Vec::new();
    for &tau in &s.taus {
        for &rho in &s.rhos {
            for &alpha in &s.alphas {
                for &eps in &epsilons {
                    let optimizer = lpgd::pipeline::OptimizerConfig {
                        kind: s.optimizer,
                        ..lpgd::pipeline::OptimizerConfig::adam(alpha)
                    };
                    let mut config =
                        TrainConfig::new(s.method, EnvelopeConfig::average(tau).with_rho(rho), optimizer);
                    config.epochs = s.epochs;
                    config.batch_size = s.batch_size;
                    config.solver_tol = eps;
                    config.seed = seed;
                    grid.push(config);
                }
            }
        }
    }
    grid
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<Emitted> {
    let s = &cfg.sweep;
    let grid = sweep_grid(s, cfg.seed, cfg.tol);
    for config in &grid {
        config.validate()?;
    }
    let jobs: Vec<Job> = grid
        .into_iter()
        .map(|config| Job {
            id: sweep_job_id(&config),
            config,
        })
        .collect();
    let task = synthetic::selection_task(s, sub_seed(cfg.seed, 1))?;
    let data = TrainData {
        train: &task.train,
        test: &task.test,
        sudoku_metrics: false,
    };
    let (files, runs) = run_jobs(cfg, &jobs, &data, &task.layer)?;
    Ok((files, runs, serde_json::Value::Null))
}

/// A random strongly convex QP with equality constraints through an
/// interior point of `[-1, 1]^n`, and a random unit loss gradient.
fn bench_instance(q: &QpBenchExperiment, rng: &mut ChaCha8Rng) -> (ProblemParameters, DVector<f64>) {
    let (n, m) = (q.n, q.m);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let f = DMatrix::from_fn(n, n, |_, _| normal());
    let h = f.transpose() * &f / n as f64 + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| normal());
    let a = DMatrix::from_fn(m, n, |_, _| normal());
    let x0 = DVector::from_fn(n, |_, _| 0.5 * normal().tanh());
    let b = -(&a * &x0);
    let mut g = DVector::from_fn(n, |_, _| normal());
    g /= g.norm();
    let p = ProblemParameters::box_lp(c, DVector::from_element(n, -1.0), DVector::from_element(n, 1.0))
        .with_quadratic(h)
        .with_equalities(a, b);
    (p, g)
}

fn run_qp_bench(cfg: &ExperimentConfig) -> Result<Emitted> {
    let q = &cfg.qp_bench;
    let settings = SolverSettings::with_tol(cfg.tol.unwrap_or(q.tol));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = format!("{QP_BENCH_HEADER}\n");
    let (mut cold_total, mut warm_total) = (0usize, 0usize);
    let (mut cold_s, mut warm_s) = (0.0, 0.0);
    for i in 0..q.instances {
        let (p, g) = bench_instance(q, &mut rng);
        let forward = solve(&p, &settings, None)?;
        let mut perturbed = p.clone();
        perturbed.c += &g * q.tau;
        let t = Instant::now();
        let cold = solve(&perturbed, &settings, None)?;
        let t_cold = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let warm = solve(&perturbed, &settings, Some(&forward.solution))?;
        let t_warm = t.elapsed().as_secs_f64();
        cold_total += cold.iterations;
        warm_total += warm.iterations;
        cold_s += t_cold;
        warm_s += t_warm;
        let time = |s: f64| if cfg.timing { fmt_float(s) } else { String::new() };
        csv.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            forward.iterations,
            cold.iterations,
            warm.iterations,
            time(t_cold),
            time(t_warm)
        ));
    }
    write(&cfg.out_dir, QP_BENCH_FILE, &csv)?;
    let count = q.instances as f64;
    let mut stats = serde_json::json!({
        "instances": q.instances,
        "mean_cold_iters": cold_total as f64 / count,
        "mean_warm_iters": warm_total as f64 / count,
    });
    if cfg.timing {
        stats["total_cold_s"] = cold_s.into();
        stats["total_warm_s"] = warm_s.into();
    }
    Ok((vec![QP_BENCH_FILE.into()], Vec::new(), stats))
}
