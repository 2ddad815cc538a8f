//! End-to-end training of optimization-layer parameters.
//!
//! Each sample maps an input to a problem (through the cost model), the
//! layer solves it, and the mean squared error to the target is
//! backpropagated with one of the pluggable backward methods. Gradients of
//! a mini-batch are averaged and applied by SGD or Adam.
//!
//! Forward solves are warm-started from the previous solution of the same
//! sample; backward solves are warm-started at the forward solution.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envelope::{self, EnvelopeConfig, LossSpec, Side, Variant};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::implicit::{implicit_gradient, ComplementarityPolicy, ImplicitOptions};
use crate::problem::{PrimalDualSolution, ProblemParameters};
use crate::solver::{self, SolverReport, SolverSettings};
use crate::sudoku;
use crate::update::{update_from_solutions, ParamMask, UpdateForm, UpdateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LPGD_Lower")]
    LpgdLower,
    #[serde(rename = "LPGD_Upper")]
    LpgdUpper,
    #[serde(rename = "LPGD_Average")]
    LpgdAverage,
    #[serde(rename = "LPPM")]
    Lppm,
    /// Implicit differentiation of the KKT conditions (the GD baseline).
    #[serde(rename = "Implicit")]
    Implicit,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LpgdLower => "LPGD_Lower",
            Method::LpgdUpper => "LPGD_Upper",
            Method::LpgdAverage => "LPGD_Average",
            Method::Lppm => "LPPM",
            Method::Implicit => "Implicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// `tau` and `rho` of the backward pass. The variant is taken from
    /// `method` for the LPGD methods; LPPM uses it as given. The implicit
    /// baseline only reads `rho`.
    pub envelope: EnvelopeConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub solver_tol: f64,
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub solver_max_iters: usize,
}

fn default_max_iters() -> usize {
    SolverSettings::default().max_iters
}

impl TrainConfig {
    pub fn new(method: Method, envelope: EnvelopeConfig, optimizer: OptimizerConfig) -> Self {
        Self {
            method,
            envelope,
            optimizer,
            epochs: 10,
            batch_size: 1,
            solver_tol: 1e-6,
            seed: 0,
            solver_max_iters: default_max_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerance must be positive".into()));
        }
        self.envelope.validate()
    }

    fn solver_settings(&self) -> SolverSettings {
        SolverSettings::with_tol(self.solver_tol).max_iters(self.solver_max_iters)
    }

    fn backward_envelope(&self) -> EnvelopeConfig {
        let mut cfg = self.envelope;
        match self.method {
            Method::LpgdLower => cfg.variant = Variant::Lower,
            Method::LpgdUpper => cfg.variant = Variant::Upper,
            Method::LpgdAverage => cfg.variant = Variant::Average,
            Method::Lppm | Method::Implicit => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: DVector<f64>,
    pub target: DVector<f64>,
}

/// How the linear cost of the layer is produced from a sample's input.
#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    /// `c` is the stored parameter; inputs are ignored.
    Direct,
    /// `c = c_param + scale * input`.
    InputOffset { scale: f64 },
    /// Affine backbone `c = W input + u`; `mask.c` makes `W, u` learnable.
    Affine { w: DMatrix<f64>, u: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnableParams {
    /// Current layer parameters (`c` is the base cost for `CostModel`s that
    /// use it).
    pub params: ProblemParameters,
    pub mask: ParamMask,
    pub cost: CostModel,
    /// When set, `b = -A x_feas` is kept tied to `A`, so `x_feas` stays
    /// feasible and the layer never loses feasibility through learning.
    pub b_anchor: Option<DVector<f64>>,
}

impl LearnableParams {
    pub fn new(params: ProblemParameters, mask: ParamMask) -> Self {
        Self {
            params,
            mask,
            cost: CostModel::Direct,
            b_anchor: None,
        }
    }

    pub fn with_cost(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    /// Tie `b` to `A` through the feasible point and set `b` accordingly.
    pub fn with_anchor(mut self, x_feas: DVector<f64>) -> Self {
        self.params.b = -(&self.params.a * &x_feas);
        self.b_anchor = Some(x_feas);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mask.any() {
            return Err(Error::InvalidConfig("no parameter block is learnable".into()));
        }
        self.params.validate()?;
        let n = self.params.n();
        if let CostModel::Affine { w, u } = &self.cost {
            if w.nrows() != n || u.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "backbone produces {} costs but the layer has {n} variables",
                    w.nrows()
                )));
            }
        }
        if let Some(x) = &self.b_anchor {
            if x.len() != n {
                return Err(Error::DimensionMismatch("anchor point has the wrong length".into()));
            }
        }
        Ok(())
    }

    pub fn cost_for(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.cost {
            CostModel::Direct => Ok(self.params.c.clone()),
            CostModel::InputOffset { scale } => {
                if input.len() != self.params.n() {
                    return Err(Error::DimensionMismatch("input length must equal n".into()));
                }
                Ok(&self.params.c + input * *scale)
            }
            CostModel::Affine { w, u } => {
                if input.len() != w.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "backbone expects {} features, got {}",
                        w.ncols(),
                        input.len()
                    )));
                }
                Ok(w * input + u)
            }
        }
    }

    pub fn problem_for(&self, input: &DVector<f64>) -> Result<ProblemParameters> {
        let mut p = self.params.clone();
        p.c = self.cost_for(input)?;
        Ok(p)
    }

    /// Blocks the backward pass has to produce.
    fn backward_mask(&self) -> ParamMask {
        ParamMask {
            b: self.mask.b || (self.mask.a && self.b_anchor.is_some()),
            ..self.mask
        }
    }

    fn learns_b(&self) -> bool {
        self.mask.b && self.b_anchor.is_none()
    }

    /// Learnable values in a fixed order: cost block, H, A (column-major),
    /// then b.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.mask.c {
            match &self.cost {
                CostModel::Affine { w, u } => {
                    out.extend(w.iter());
                    out.extend(u.iter());
                }
                _ => out.extend(self.params.c.iter()),
            }
        }
        if self.mask.h {
            let n = self.params.n();
            match &self.params.h {
                Some(h) => out.extend(h.iter()),
                None => out.extend(std::iter::repeat_n(0.0, n * n)),
            }
        }
        if self.mask.a {
            out.extend(self.params.a.iter());
        }
        if self.learns_b() {
            out.extend(self.params.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut it = flat.iter().copied();
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>| -> Result<()> {
            for v in dst {
                *v = it
                    .next()
                    .ok_or_else(|| Error::DimensionMismatch("flat parameter vector too short".into()))?;
            }
            Ok(())
        };
        let n = self.params.n();
        if self.mask.c {
            match &mut self.cost {
                CostModel::Affine { w, u } => {
                    take(&mut w.iter_mut())?;
                    take(&mut u.iter_mut())?;
                }
                _ => take(&mut self.params.c.iter_mut())?,
            }
        }
        if self.mask.h {
            let h = self.params.h.get_or_insert_with(|| DMatrix::zeros(n, n));
            take(&mut h.iter_mut())?;
        }
        if self.mask.a {
            take(&mut self.params.a.iter_mut())?;
        }
        if self.learns_b() {
            take(&mut self.params.b.iter_mut())?;
        }
        if it.next().is_some() {
            return Err(Error::DimensionMismatch("flat parameter vector too long".into()));
        }
        if let Some(x) = &self.b_anchor {
            self.params.b = -(&self.params.a * x);
        }
        Ok(())
    }

    /// Chain a layer update into the flat parameter layout.
    pub fn chain(&self, update: &UpdateVector, input: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        if self.mask.c {
            let d_c = update.d_c.as_ref().expect("cost block requested");
            match &self.cost {
                CostModel::Affine { .. } => {
                    let d_w = d_c * input.transpose();
                    out.extend(d_w.iter());
                    out.extend(d_c.iter());
                }
                _ => out.extend(d_c.iter()),
            }
        }
        if self.mask.h {
            out.extend(update.d_h.as_ref().expect("H block requested").iter());
        }
        if self.mask.a {
            let mut d_a = update.d_a.clone().expect("A block requested");
            if let Some(x) = &self.b_anchor {
                // b = -A x_feas
                d_a -= update.d_b.as_ref().expect("b block requested") * x.transpose();
            }
            out.extend(d_a.iter());
        }
        if self.learns_b() {
            out.extend(update.d_b.as_ref().expect("b block requested").iter());
        }
        out
    }
}

/// Mean squared error `mean((x - t)^2)` and its gradient.
pub fn mse(x: &DVector<f64>, target: &DVector<f64>) -> f64 {
    (x - target).norm_squared() / x.len() as f64
}

pub fn mse_gradient(x: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    (x - target) * (2.0 / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Mse,
    /// Fraction of instances whose argmax-rounded prediction violates at
    /// least one Sudoku rule.
    ExactError,
    /// Fraction of violated Sudoku rules over all instances.
    ConstraintError,
}

pub type MetricMap = BTreeMap<Metric, f64>;

pub fn score_predictions(
    predictions: &[DVector<f64>],
    targets: &[DVector<f64>],
    metrics: &[Metric],
) -> MetricMap {
    assert_eq!(predictions.len(), targets.len());
    let count = predictions.len().max(1) as f64;
    let mut out = MetricMap::new();
    for &metric in metrics {
        let value = match metric {
            Metric::Mse => predictions.iter().zip(targets).map(|(x, t)| mse(x, t)).sum::<f64>() / count,
            Metric::ExactError => {
                predictions
                    .iter()
                    .filter(|x| sudoku::violated_rules(&sudoku::argmax_round(x)) > 0)
                    .count() as f64
                    / count
            }
            Metric::ConstraintError => {
                predictions
                    .iter()
                    .map(|x| sudoku::violated_rules(&sudoku::argmax_round(x)))
                    .sum::<usize>() as f64
                    / (count * sudoku::NUM_RULES as f64)
            }
        };
        out.insert(metric, value);
    }
    out
}

/// Warm-start cache keyed by dataset index. Entries are never invalidated.
#[derive(Debug, Clone, Default)]
pub struct WarmCache {
    entries: Vec<Option<PrimalDualSolution>>,
}

impl WarmCache {
    pub fn new(len: usize) -> Self {
        Self {
            entries: vec![None; len],
        }
    }

    pub fn get(&self, i: usize) -> Option<&PrimalDualSolution> {
        self.entries.get(i).and_then(Option::as_ref)
    }

    pub fn put(&mut self, i: usize, z: PrimalDualSolution) {
        if i >= self.entries.len() {
            self.entries.resize(i + 1, None);
        }
        self.entries[i] = Some(z);
    }
}

/// Solve, accepting the best iterate when the iteration budget runs out.
fn solve_lenient(
    params: &ProblemParameters,
    settings: &SolverSettings,
    warm: Option<&PrimalDualSolution>,
    failures: &mut usize,
) -> Result<SolverReport> {
    match solver::solve(params, settings, warm) {
        Err(Error::MaxIterationsExceeded(report)) => {
            *failures += 1;
            Ok(*report)
        }
        other => other,
    }
}

/// Forward-solve every sample and score the predictions.
pub fn evaluate(
    learnable: &LearnableParams,
    samples: &[Sample],
    metrics: &[Metric],
    settings: &SolverSettings,
    mut cache: Option<&mut WarmCache>,
) -> Result<MetricMap> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut failures = 0;
    for (i, s) in samples.iter().enumerate() {
        let p = learnable.problem_for(&s.input)?;
        let warm = cache.as_ref().and_then(|c| c.get(i)).cloned();
        let report = solve_lenient(&p, settings, warm.as_ref(), &mut failures)?;
        if let Some(c) = cache.as_mut() {
            c.put(i, report.solution.clone());
        }
        preds.push(report.solution.x);
    }
    let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    Ok(score_predictions(&preds, &targets, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `0` is the evaluation of the initial parameters.
    pub epoch: usize,
    /// Running mean over the epoch's forward passes (full evaluation for
    /// epoch 0).
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub exact_err: Option<f64>,
    pub constraint_err: Option<f64>,
    pub t_forward_s: f64,
    pub t_backward_s: f64,
    pub forward_solves: usize,
    pub backward_solves: usize,
    pub forward_iters: usize,
    pub backward_iters: usize,
    /// Solves that hit the iteration limit and continued with the best
    /// iterate.
    pub solver_failures: usize,
}

impl EpochRecord {
    pub fn mean_forward_iters(&self) -> f64 {
        self.forward_iters as f64 / self.forward_solves.max(1) as f64
    }

    pub fn mean_backward_iters(&self) -> f64 {
        self.backward_iters as f64 / self.backward_solves.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub method: Method,
    pub records: Vec<EpochRecord>,
    /// Why training stopped early, if it did.
    pub diverged: Option<String>,
    pub steps: usize,
    pub final_params: LearnableParams,
}

pub const TRACE_HEADER: &str =
    "epoch,train_mse,test_mse,exact_err,constraint_err,t_forward_s,t_backward_s";

impl TrainTrace {
    /// Per-epoch CSV. Missing metrics are empty fields; with `timing` off
    /// the timing columns are left empty too, which makes the file a pure
    /// function of the configuration.
    pub fn to_csv(&self, timing: bool) -> String {
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let (tf, tb) = if timing {
                (fmt_float(r.t_forward_s), fmt_float(r.t_backward_s))
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                fmt_float(r.train_mse),
                opt(r.test_mse),
                opt(r.exact_err),
                opt(r.constraint_err),
                tf,
                tb
            ));
        }
        out
    }

    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("trace has the initial record")
    }

    pub fn initial_record(&self) -> &EpochRecord {
        &self.records[0]
    }

    /// Epochs after the initial evaluation.
    pub fn training_records(&self) -> &[EpochRecord] {
        &self.records[1..]
    }

    pub fn summary(&self, timing: bool) -> TraceSummary {
        let train = self.training_records();
        let sum = |f: fn(&EpochRecord) -> f64| train.iter().map(f).sum::<f64>();
        let fwd_solves = train.iter().map(|r| r.forward_solves).sum::<usize>().max(1) as f64;
        let bwd_solves = train.iter().map(|r| r.backward_solves).sum::<usize>().max(1) as f64;
        TraceSummary {
            method: self.method.name().to_string(),
            epochs: train.len(),
            steps: self.steps,
            diverged: self.diverged.clone(),
            initial_train_mse: self.initial_record().train_mse,
            final_train_mse: self.final_record().train_mse,
            final_test_mse: self.final_record().test_mse,
            final_exact_err: self.final_record().exact_err,
            final_constraint_err: self.final_record().constraint_err,
            mean_forward_iters: train.iter().map(|r| r.forward_iters).sum::<usize>() as f64 / fwd_solves,
            mean_backward_iters: train.iter().map(|r| r.backward_iters).sum::<usize>() as f64 / bwd_solves,
            total_forward_s: timing.then(|| sum(|r| r.t_forward_s)),
            total_backward_s: timing.then(|| sum(|r| r.t_backward_s)),
            solver_failures: self.records.iter().map(|r| r.solver_failures).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub method: String,
    pub epochs: usize,
    pub steps: usize,
    pub diverged: Option<String>,
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    pub final_exact_err: Option<f64>,
    pub final_constraint_err: Option<f64>,
    pub mean_forward_iters: f64,
    pub mean_backward_iters: f64,
    pub total_forward_s: Option<f64>,
    pub total_backward_s: Option<f64>,
    pub solver_failures: usize,
}

struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(cfg: OptimizerConfig, dim: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        let lr = self.cfg.learning_rate;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                }
            }
        }
    }
}

/// Outcome of one backward pass.
struct Backward {
    update: UpdateVector,
    solves: usize,
    iterations: usize,
}

fn backward(
    config: &TrainConfig,
    learnable: &LearnableParams,
    problem: &ProblemParameters,
    forward: &SolverReport,
    target: &DVector<f64>,
    settings: &SolverSettings,
    failures: &mut usize,
) -> Result<Backward> {
    let z_star = &forward.solution;
    let grad = mse_gradient(&z_star.x, target);
    let mask = learnable.backward_mask();
    if config.method == Method::Implicit {
        let opts = ImplicitOptions::new(config.envelope.rho, config.solver_tol)
            .policy(ComplementarityPolicy::TreatWeakAsActive)
            .mask(mask);
        let report = implicit_gradient(problem, z_star, &grad, &opts)?;
        return Ok(Backward {
            update: report.update,
            solves: 0,
            iterations: 0,
        });
    }
    let loss = match config.method {
        Method::Lppm => LossSpec::QuadraticMse {
            target: target.clone(),
            weight: 2.0 / target.len() as f64,
        },
        _ => LossSpec::linearized(grad),
    };
    let env = config.backward_envelope();
    let mut solves = 0;
    let mut iterations = 0;
    let mut prox = |side: Side| -> Result<PrimalDualSolution> {
        let report = match envelope::proximal_point(problem, &loss, side, env.tau, env.rho, z_star, settings) {
            Err(Error::MaxIterationsExceeded(report)) => {
                *failures += 1;
                *report
            }
            other => other?,
        };
        solves += 1;
        iterations += report.iterations;
        Ok(report.solution)
    };
    let (lower, upper) = match env.variant {
        Variant::Lower => (Some(prox(Side::Lower)?), None),
        Variant::Upper => (None, Some(prox(Side::Upper)?)),
        Variant::Average => (Some(prox(Side::Lower)?), Some(prox(Side::Upper)?)),
    };
    let update = update_from_solutions(
        z_star,
        lower.as_ref(),
        upper.as_ref(),
        env.tau,
        mask,
        UpdateForm::Gradient,
    )?;
    Ok(Backward {
        update,
        solves,
        iterations,
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::InfeasibleProblem(_) | Error::NonFinite(_))
}

/// Metrics reported for the test split; Sudoku metrics are requested by
/// the caller.
#[derive(Debug, Clone, Default)]
pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub test: &'a [Sample],
    pub sudoku_metrics: bool,
}

/// Train `learnable` on the data. Infeasible perturbed problems and
/// non-finite values stop the run and mark the trace as diverged; other
/// errors are returned.
pub fn train(data: &TrainData<'_>, learnable: LearnableParams, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate()?;
    learnable.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let settings = config.solver_settings();
    let mut learnable = learnable;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_cache = WarmCache::new(data.train.len());
    let mut test_cache = WarmCache::new(data.test.len());
    let mut theta = learnable.to_flat();
    let mut optimizer = Optimizer::new(config.optimizer, theta.len());
    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut steps = 0;

    let test_metrics: Vec<Metric> = if data.sudoku_metrics {
        vec![Metric::Mse, Metric::ExactError, Metric::ConstraintError]
    } else {
        vec![Metric::Mse]
    };
    let eval_test = |learnable: &LearnableParams, cache: &mut WarmCache| -> Result<MetricMap> {
        if data.test.is_empty() {
            return Ok(MetricMap::new());
        }
        evaluate(learnable, data.test, &test_metrics, &settings, Some(cache))
    };
    let record = |epoch: usize, train_mse: f64, test: &MetricMap| EpochRecord {
        epoch,
        train_mse,
        test_mse: test.get(&Metric::Mse).copied(),
        exact_err: test.get(&Metric::ExactError).copied(),
        constraint_err: test.get(&Metric::ConstraintError).copied(),
        t_forward_s: 0.0,
        t_backward_s: 0.0,
        forward_solves: 0,
        backward_solves: 0,
        forward_iters: 0,
        backward_iters: 0,
        solver_failures: 0,
    };

    let start = Instant::now();
    let initial = evaluate(&learnable, data.train, &[Metric::Mse], &settings, Some(&mut train_cache))?;
    let mut first = record(0, initial[&Metric::Mse], &eval_test(&learnable, &mut test_cache)?);
    first.t_forward_s = start.elapsed().as_secs_f64();
    first.forward_solves = data.train.len();
    records.push(first);

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut diverged = None;
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut rec = record(epoch, 0.0, &MetricMap::new());
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad_sum = vec![0.0; theta.len()];
            for &i in batch {
                let sample = &data.train[i];
                let problem = learnable.problem_for(&sample.input)?;

                let t0 = Instant::now();
                let forward = match solve_lenient(&problem, &settings, train_cache.get(i), &mut rec.solver_failures) {
                    Ok(r) => r,
                    Err(e) if is_divergence(&e) => {
                        diverged = Some(format!("epoch {epoch}, forward: {e}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                rec.t_forward_s += t0.elapsed().as_secs_f64();
                rec.forward_solves += 1;
                rec.forward_iters += forward.iterations;
                loss_sum += mse(&forward.solution.x, &sample.target);

                let t1 = Instant::now();
                let bw = match backward(config, &learnable, &problem, &forward, &sample.target, &settings, &mut rec.solver_failures) {
                    Ok(b) => b,
                    Err(e) if is_divergence(&e) => {
                        diverged = Some(format!("epoch {epoch}, backward: {e}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                rec.t_backward_s += t1.elapsed().as_secs_f64();
                rec.backward_solves += bw.solves;
                rec.backward_iters += bw.iterations;

                train_cache.put(i, forward.solution);
                for (acc, g) in grad_sum.iter_mut().zip(learnable.chain(&bw.update, &sample.input)) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad_sum.iter_mut().for_each(|g| *g *= scale);
            if grad_sum.iter().any(|g| !g.is_finite()) {
                diverged = Some(format!("epoch {epoch}: non-finite gradient"));
                break 'epochs;
            }
            optimizer.step(&mut theta, &grad_sum);
            learnable.set_flat(&theta)?;
            steps += 1;
        }
        rec.train_mse = loss_sum / data.train.len() as f64;
        match eval_test(&learnable, &mut test_cache) {
            Ok(test) => {
                rec.test_mse = test.get(&Metric::Mse).copied();
                rec.exact_err = test.get(&Metric::ExactError).copied();
                rec.constraint_err = test.get(&Metric::ConstraintError).copied();
            }
            Err(e) if is_divergence(&e) => {
                diverged = Some(format!("epoch {epoch}, evaluation: {e}"));
                records.push(rec);
                break;
            }
            Err(e) => return Err(e),
        }
        records.push(rec);
    }

    Ok(TrainTrace {
        method: config.method,
        records,
        diverged,
        steps,
        final_params: learnable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn one_dim(method: Method, optimizer: OptimizerConfig, epochs: usize) -> TrainTrace {
        let p = ProblemParameters::unit_box_lp(dvector![0.5]);
        let learnable = LearnableParams::new(p, ParamMask::COST);
        let sample = Sample {
            input: dvector![],
            target: dvector![1.0],
        };
        let mut cfg = TrainConfig::new(method, EnvelopeConfig::lower(1.0), optimizer);
        cfg.epochs = epochs;
        cfg.solver_tol = 1e-9;
        let data = TrainData {
            train: std::slice::from_ref(&sample),
            test: &[],
            sudoku_metrics: false,
        };
        train(&data, learnable, &cfg).unwrap()
    }

    #[test]
    fn one_dim_cost_regression() {
        let trace = one_dim(Method::LpgdLower, OptimizerConfig::sgd(0.1), 50);
        assert!(trace.final_params.params.c[0] < 0.0);
        assert_eq!(trace.initial_record().train_mse, 1.0);
        let eval = evaluate(
            &trace.final_params,
            &[Sample {
                input: dvector![],
                target: dvector![1.0],
            }],
            &[Metric::Mse],
            &SolverSettings::with_tol(1e-9),
            None,
        )
        .unwrap();
        assert!(eval[&Metric::Mse] < 1e-12);
    }

    #[test]
    fn zero_loss_leaves_parameters_unchanged() {
        let p = ProblemParameters::unit_box_lp(dvector![1.0, -1.0]);
        let learnable = LearnableParams::new(p.clone(), ParamMask::COST);
        let sample = Sample {
            input: dvector![],
            target: dvector![0.0, 1.0],
        };
        for method in [Method::LpgdAverage, Method::Lppm, Method::Implicit] {
            let mut cfg = TrainConfig::new(method, EnvelopeConfig::lower(1.0), OptimizerConfig::adam(0.1));
            cfg.epochs = 3;
            cfg.solver_tol = 1e-9;
            let data = TrainData {
                train: std::slice::from_ref(&sample),
                test: &[],
                sudoku_metrics: false,
            };
            let trace = train(&data, learnable.clone(), &cfg).unwrap();
            assert_eq!(trace.final_params.params.c, p.c, "{method:?}");
        }
    }

    #[test]
    fn flat_round_trip_with_anchor_and_backbone() {
        let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.0])
            .with_equalities(nalgebra::dmatrix![1.0, 2.0], dvector![0.0]);
        let learnable = LearnableParams::new(p, ParamMask::ALL)
            .with_cost(CostModel::Affine {
                w: nalgebra::dmatrix![1.0; 2.0],
                u: dvector![0.5, -0.5],
            })
            .with_anchor(dvector![0.5, 0.5]);
        assert_eq!(learnable.params.b, dvector![-1.5]);
        let flat = learnable.to_flat();
        // W (2) + u (2) + H (4) + A (2); b is tied
        assert_eq!(flat.len(), 10);
        let mut copy = learnable.clone();
        copy.set_flat(&flat).unwrap();
        assert_eq!(copy.params.b, learnable.params.b);
        assert_eq!(copy.to_flat(), flat);
    }

    #[test]
    fn uniform_sudoku_prediction_scores() {
        let (_, _) = sudoku::rule_constraints();
        let board: Vec<Option<u8>> = [0, 1, 2, 3, 2, 3, 0, 1, 1, 0, 3, 2, 3, 2, 1, 0]
            .iter()
            .map(|&d| Some(d))
            .collect();
        let target = sudoku::encode(&board);
        let pred = DVector::from_element(sudoku::NUM_VARS, 0.25);
        let m = score_predictions(
            &[pred],
            &[target],
            &[Metric::Mse, Metric::ExactError, Metric::ConstraintError],
        );
        // 16 ones at (3/4)^2, 48 zeros at (1/4)^2
        let expected_mse = (16.0 * 0.5625 + 48.0 * 0.0625) / 64.0;
        assert!((m[&Metric::Mse] - expected_mse).abs() < 1e-15);
        assert_eq!(m[&Metric::ExactError], 1.0);
        // digit 0 everywhere: cells fine, every row/column/box digit rule broken
        assert_eq!(m[&Metric::ConstraintError], 48.0 / 64.0);
    }

    #[test]
    fn csv_header_and_blank_timing() {
        let trace = one_dim(Method::LpgdLower, OptimizerConfig::sgd(0.1), 2);
        let csv = trace.to_csv(false);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        assert!(lines.next().unwrap().ends_with(",,,,,"));
    }
}
