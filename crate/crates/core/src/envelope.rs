//! Lagrangian divergence, Lagrange-Moreau envelopes and their proximal maps.
//!
//! For temperature `tau` the lower proximal point solves
//!
//! ```text
//! argmin_{x in X} max_y  L(x, y, w) + tau * l(x) + tau / (2 rho) ||x - x*||^2
//! ```
//!
//! and the upper one flips the sign of the loss term. The augmentation term
//! is dropped when `rho == 0`. For linear and quadratic losses this is again
//! a box QP, so the forward solver is reused. The perturbed objective is
//! divided by `max(1, tau)` before solving, which leaves the primal
//! minimizer unchanged and rescales the duals back afterwards.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::problem::{PrimalDualSolution, ProblemParameters};
use crate::solver::{self, lagrangian, SolverReport, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Lower,
    Upper,
    Average,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lower => "lower",
            Variant::Upper => "upper",
            Variant::Average => "average",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lower" => Ok(Variant::Lower),
            "upper" => Ok(Variant::Upper),
            "average" => Ok(Variant::Average),
            other => Err(Error::InvalidConfig(format!("unknown envelope variant {other:?}"))),
        }
    }
}

/// One side of the envelope; the average variant combines both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Lower => 1.0,
            Side::Upper => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub variant: Variant,
    /// Temperature, strictly positive.
    pub tau: f64,
    /// Augmentation strength; `0` disables the quadratic augmentation.
    #[serde(default)]
    pub rho: f64,
}

impl EnvelopeConfig {
    pub fn new(variant: Variant, tau: f64, rho: f64) -> Result<Self> {
        let cfg = Self { variant, tau, rho };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lower(tau: f64) -> Self {
        Self {
            variant: Variant::Lower,
            tau,
            rho: 0.0,
        }
    }

    pub fn upper(tau: f64) -> Self {
        Self {
            variant: Variant::Upper,
            tau,
            rho: 0.0,
        }
    }

    pub fn average(tau: f64) -> Self {
        Self {
            variant: Variant::Average,
            tau,
            rho: 0.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rho must be nonnegative, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// `{variant}_tau{tau}_rho{rho}`, used as CSV column name.
    pub fn id(&self) -> String {
        format!("{}_tau{}_rho{}", self.variant, self.tau, self.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `l(x) = <x - x*, grad>`, anchored so that `l(x*) = 0`.
    LinearizedAtSolution { grad: DVector<f64> },
    /// `l(x) = weight / 2 * ||x - target||^2`.
    QuadraticMse { target: DVector<f64>, weight: f64 },
}

impl LossSpec {
    pub fn linearized(grad: DVector<f64>) -> Self {
        LossSpec::LinearizedAtSolution { grad }
    }

    /// `1/2 ||x - target||^2`.
    pub fn half_squared(target: DVector<f64>) -> Self {
        LossSpec::QuadraticMse {
            target,
            weight: 1.0,
        }
    }

    /// `||x - target||^2`.
    pub fn squared(target: DVector<f64>) -> Self {
        LossSpec::QuadraticMse {
            target,
            weight: 2.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LossSpec::LinearizedAtSolution { grad } => grad.len(),
            LossSpec::QuadraticMse { target, .. } => target.len(),
        }
    }

    /// Loss value; `anchor` is the linearization point for the linearized
    /// loss and ignored otherwise.
    pub fn value(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        match self {
            LossSpec::LinearizedAtSolution { grad } => (x - anchor).dot(grad),
            LossSpec::QuadraticMse { target, weight } => 0.5 * weight * (x - target).norm_squared(),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LossSpec::LinearizedAtSolution { grad } => grad.clone(),
            LossSpec::QuadraticMse { target, weight } => (x - target) * *weight,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "loss payload has length {} but the primal dimension is {n}",
                self.dim()
            )));
        }
        if let LossSpec::QuadraticMse { weight, .. } = self {
            if !(*weight >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "quadratic loss weight must be nonnegative, got {weight}"
                )));
            }
        }
        Ok(())
    }
}

/// `L(z, w)` with dimension checks.
pub fn lagrangian_value(z: &PrimalDualSolution, params: &ProblemParameters) -> Result<f64> {
    params.check_dimensions()?;
    if z.x.len() != params.n() || z.y.len() != params.m() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimensions ({}, {}) but problem has ({}, {})",
            z.x.len(),
            z.y.len(),
            params.n(),
            params.m()
        )));
    }
    Ok(lagrangian(params, &z.x, &z.y))
}

/// `sup_y L(x, y, w) - L*(w)`, with `L*` obtained from the forward solver.
pub fn lagrangian_divergence(
    x: &DVector<f64>,
    params: &ProblemParameters,
    settings: &SolverSettings,
) -> Result<f64> {
    check_point(x, params, settings.tol)?;
    check_effective_feasibility(x, params, settings.tol)?;
    let optimum = solver::solve(params, settings, None)?;
    Ok((params.objective(x) - optimum.objective).max(0.0))
}

/// Divergence against a known optimal value `L*(w)`.
pub fn lagrangian_divergence_given_optimum(
    x: &DVector<f64>,
    params: &ProblemParameters,
    optimal_value: f64,
    tol: f64,
) -> Result<f64> {
    check_point(x, params, tol)?;
    check_effective_feasibility(x, params, tol)?;
    Ok((params.objective(x) - optimal_value).max(0.0))
}

fn check_point(x: &DVector<f64>, params: &ProblemParameters, tol: f64) -> Result<()> {
    params.check_dimensions()?;
    if x.len() != params.n() {
        return Err(Error::DimensionMismatch(format!(
            "point has length {} but the problem has {} variables",
            x.len(),
            params.n()
        )));
    }
    if let Some(i) = (0..x.len()).find(|&i| x[i] < params.lo[i] - tol || x[i] > params.hi[i] + tol) {
        return Err(Error::InvalidParameters(format!(
            "x[{i}] = {} lies outside the box [{}, {}]",
            x[i], params.lo[i], params.hi[i]
        )));
    }
    Ok(())
}

fn check_effective_feasibility(x: &DVector<f64>, params: &ProblemParameters, tol: f64) -> Result<()> {
    let violation = solver::primal_residual(params, x);
    if violation > tol {
        return Err(Error::InfiniteDivergence { violation });
    }
    Ok(())
}

/// The perturbed problem whose solution is the proximal point, already
/// divided by `max(1, tau)`. Returns the problem and that scale.
pub fn perturbed_problem(
    params: &ProblemParameters,
    loss: &LossSpec,
    side: Side,
    tau: f64,
    rho: f64,
    x_star: &DVector<f64>,
) -> Result<(ProblemParameters, f64)> {
    let n = params.n();
    loss.check(n)?;
    if x_star.len() != n {
        return Err(Error::DimensionMismatch("x* has the wrong length".into()));
    }
    let scale = 1.0 / tau.max(1.0);
    let sign = side.sign();
    let mut c = &params.c * scale;
    let mut h: Option<DMatrix<f64>> = params.h.as_ref().map(|h| h * scale);
    let add_diag = |h: &mut Option<DMatrix<f64>>, d: f64| {
        let mat = h.get_or_insert_with(|| DMatrix::zeros(n, n));
        for i in 0..n {
            mat[(i, i)] += d;
        }
    };
    match loss {
        LossSpec::LinearizedAtSolution { grad } => {
            c += grad * (sign * tau * scale);
        }
        LossSpec::QuadraticMse { target, weight } => {
            let k = sign * tau * scale * weight;
            add_diag(&mut h, k);
            c -= target * k;
        }
    }
    if rho > 0.0 {
        let k = tau * scale / rho;
        add_diag(&mut h, k);
        c -= x_star * k;
    }
    let perturbed = ProblemParameters {
        c,
        h,
        a: params.a.clone(),
        b: params.b.clone(),
        lo: params.lo.clone(),
        hi: params.hi.clone(),
    };
    Ok((perturbed, scale))
}

/// Proximal point for one side of the envelope, warm-started at `z_star`.
pub fn proximal_point(
    params: &ProblemParameters,
    loss: &LossSpec,
    side: Side,
    tau: f64,
    rho: f64,
    z_star: &PrimalDualSolution,
    settings: &SolverSettings,
) -> Result<SolverReport> {
    EnvelopeConfig::new(Variant::Lower, tau, rho)?;
    let (perturbed, scale) = perturbed_problem(params, loss, side, tau, rho, &z_star.x)?;
    let report = match perturbed.validate() {
        Ok(()) => {
            let warm = PrimalDualSolution::new(z_star.x.clone(), &z_star.y * scale);
            solver::solve(&perturbed, settings, Some(&warm))?
        }
        Err(Error::InvalidParameters(msg)) if msg.contains("positive semi-definite") => {
            solve_separable_nonconvex(&perturbed).ok_or_else(|| {
                Error::UnsupportedLoss(format!(
                    "the {side:?} proximal problem is nonconvex and not separable"
                ))
            })?
        }
        Err(e) => return Err(e),
    };
    Ok(unscale(report, scale))
}

/// Proximal map for a single-sided configuration.
pub fn proximal_map(
    params: &ProblemParameters,
    loss: &LossSpec,
    config: &EnvelopeConfig,
    z_star: &PrimalDualSolution,
    settings: &SolverSettings,
) -> Result<SolverReport> {
    config.validate()?;
    let side = match config.variant {
        Variant::Lower => Side::Lower,
        Variant::Upper => Side::Upper,
        Variant::Average => {
            return Err(Error::InvalidConfig(
                "the average envelope has no single proximal map; query each side".into(),
            ))
        }
    };
    proximal_point(params, loss, side, config.tau, config.rho, z_star, settings)
}

fn unscale(mut report: SolverReport, scale: f64) -> SolverReport {
    if scale != 1.0 {
        report.solution.y /= scale;
        report.objective /= scale;
    }
    report
}

/// Exact global minimizer of a box QP with diagonal (possibly indefinite)
/// Hessian and no equality constraints; `None` if the problem is not of
/// that form.
fn solve_separable_nonconvex(p: &ProblemParameters) -> Option<SolverReport> {
    if p.m() > 0 {
        return None;
    }
    let n = p.n();
    let h = p.h.as_ref()?;
    for i in 0..n {
        for j in 0..n {
            if i != j && h[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    let x = DVector::from_fn(n, |i, _| {
        let (hi_, q) = (h[(i, i)], p.c[i]);
        let f = |v: f64| 0.5 * hi_ * v * v + q * v;
        let mut candidates = vec![p.lo[i], p.hi[i]];
        if hi_ > 0.0 {
            candidates.push((-q / hi_).clamp(p.lo[i], p.hi[i]));
        }
        candidates
            .into_iter()
            .min_by(|a, b| f(*a).total_cmp(&f(*b)).then(a.total_cmp(b)))
            .expect("non-empty candidate list")
    });
    let y = DVector::zeros(0);
    Some(SolverReport {
        objective: lagrangian(p, &x, &y),
        primal_residual: 0.0,
        dual_residual: solver::dual_residual(p, &x, &y),
        solution: PrimalDualSolution { x, y },
        iterations: 0,
        warm_started: false,
        polished: false,
    })
}

/// Value of one side of the envelope given the forward solution and the
/// proximal point.
fn side_value(
    params: &ProblemParameters,
    loss: &LossSpec,
    side: Side,
    config: &EnvelopeConfig,
    forward: &SolverReport,
    prox: &PrimalDualSolution,
) -> f64 {
    let x_star = &forward.solution.x;
    let loss_val = loss.value(&prox.x, x_star);
    let divergence = lagrangian(params, &prox.x, &prox.y) - forward.objective;
    let augmentation = if config.rho > 0.0 {
        (&prox.x - x_star).norm_squared() / (2.0 * config.rho)
    } else {
        0.0
    };
    match side {
        Side::Lower => loss_val + divergence / config.tau + augmentation,
        Side::Upper => loss_val - divergence / config.tau - augmentation,
    }
}

/// Envelope value given a forward solve. Linearized losses are reported
/// relative to the anchor `l(x*) = 0`.
pub fn envelope_value_at(
    params: &ProblemParameters,
    loss: &LossSpec,
    config: &EnvelopeConfig,
    forward: &SolverReport,
    settings: &SolverSettings,
) -> Result<f64> {
    config.validate()?;
    let z_star = &forward.solution;
    let eval = |side: Side| -> Result<f64> {
        let prox = proximal_point(params, loss, side, config.tau, config.rho, z_star, settings)?;
        Ok(side_value(params, loss, side, config, forward, &prox.solution))
    };
    match config.variant {
        Variant::Lower => eval(Side::Lower),
        Variant::Upper => eval(Side::Upper),
        Variant::Average => Ok(0.5 * (eval(Side::Lower)? + eval(Side::Upper)?)),
    }
}

pub fn envelope_value(
    params: &ProblemParameters,
    loss: &LossSpec,
    config: &EnvelopeConfig,
    settings: &SolverSettings,
) -> Result<f64> {
    let forward = solver::solve(params, settings, None)?;
    envelope_value_at(params, loss, config, &forward, settings)
}

/// How the sweep treats its quadratic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepLossMode {
    /// Envelopes of the exact quadratic loss.
    Exact,
    /// Envelopes of the linearization at each `x*(c_t)`, shifted by the
    /// true loss so that columns are comparable.
    Linearized,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub direction: DVector<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
    /// Target and weight of the quadratic loss `weight/2 ||x - target||^2`.
    pub target: DVector<f64>,
    pub weight: f64,
    pub mode: SweepLossMode,
    pub configs: Vec<EnvelopeConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub true_loss: f64,
    pub envelopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTable {
    pub config_ids: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl EnvelopeTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "true_loss".to_string()];
        h.extend(self.config_ids.iter().cloned());
        h
    }

    /// CSV text with every float at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![fmt_float(row.t), fmt_float(row.true_loss)];
            fields.extend(row.envelopes.iter().map(|&v| fmt_float(v)));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Evaluate the loss and each envelope along `c + t * direction`.
pub fn envelope_sweep(
    base: &ProblemParameters,
    spec: &SweepSpec,
    settings: &SolverSettings,
) -> Result<EnvelopeTable> {
    let n = base.n();
    if spec.direction.len() != n || spec.target.len() != n {
        return Err(Error::DimensionMismatch(
            "sweep direction and target must have the primal dimension".into(),
        ));
    }
    if spec.steps < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least two steps".into()));
    }
    for cfg in &spec.configs {
        cfg.validate()?;
    }
    let exact_loss = LossSpec::QuadraticMse {
        target: spec.target.clone(),
        weight: spec.weight,
    };
    let mut rows = Vec::with_capacity(spec.steps);
    let mut warm: Option<PrimalDualSolution> = None;
    for k in 0..spec.steps {
        let t = spec.t_min + (spec.t_max - spec.t_min) * k as f64 / (spec.steps - 1) as f64;
        let mut params = base.clone();
        params.c = &base.c + &spec.direction * t;
        let forward = solver::solve(&params, settings, warm.as_ref())?;
        let x_star = &forward.solution.x;
        let true_loss = exact_loss.value(x_star, x_star);
        let (loss, offset) = match spec.mode {
            SweepLossMode::Exact => (exact_loss.clone(), 0.0),
            SweepLossMode::Linearized => {
                (LossSpec::linearized(exact_loss.gradient(x_star)), true_loss)
            }
        };
        let envelopes = spec
            .configs
            .iter()
            .map(|cfg| envelope_value_at(&params, &loss, cfg, &forward, settings).map(|v| v + offset))
            .collect::<Result<Vec<_>>>()?;
        warm = Some(forward.solution.clone());
        rows.push(SweepRow {
            t,
            true_loss,
            envelopes,
        });
    }
    Ok(EnvelopeTable {
        config_ids: spec.configs.iter().map(EnvelopeConfig::id).collect(),
        rows,
    })
}

/// Bound used for the otherwise unbounded blocks of the reduced problem.
pub const DUAL_BOX_BOUND: f64 = 1e4;

/// Rewrite the problem so that its primal optimum carries `y*(w)`.
///
/// The result is the Wolfe dual posed as a minimization over
/// `(y, u, v[, x])`, where `u, v >= 0` are the multipliers of the lower and
/// upper box bounds:
///
/// ```text
/// min 1/2 x'Hx - <b, y> - <lo, u> + <hi, v>
/// s.t. -(Hx + c + A'y - u + v) = 0
/// ```
///
/// The `x` block is only present when `H` is. The first `m` coordinates of
/// the reduced primal optimum are `y*`, and the reduced problem's equality
/// duals are `x*`, so applying the reduction twice exposes `x*` again.
pub fn dual_loss_reduction(params: &ProblemParameters) -> Result<ProblemParameters> {
    dual_loss_reduction_with_bound(params, DUAL_BOX_BOUND)
}

pub fn dual_loss_reduction_with_bound(
    params: &ProblemParameters,
    bound: f64,
) -> Result<ProblemParameters> {
    params.validate()?;
    let (n, m) = (params.n(), params.m());
    if m == 0 {
        return Err(Error::NoDuals);
    }
    let with_x = params.h.is_some();
    let dim = m + 2 * n + if with_x { n } else { 0 };

    let mut c = DVector::zeros(dim);
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::from_element(dim, bound);
    let mut a = DMatrix::zeros(n, dim);
    for j in 0..m {
        c[j] = -params.b[j];
        lo[j] = -bound;
        for i in 0..n {
            a[(i, j)] = -params.a[(j, i)];
        }
    }
    for i in 0..n {
        let (u, v) = (m + i, m + n + i);
        c[u] = -params.lo[i];
        c[v] = params.hi[i];
        a[(i, u)] = 1.0;
        a[(i, v)] = -1.0;
    }
    let mut h = None;
    if let Some(hm) = &params.h {
        let off = m + 2 * n;
        let mut big = DMatrix::zeros(dim, dim);
        for i in 0..n {
            lo[off + i] = params.lo[i];
            hi[off + i] = params.hi[i];
            for k in 0..n {
                big[(off + i, off + k)] = hm[(i, k)];
                a[(i, off + k)] = -hm[(i, k)];
            }
        }
        h = Some(big);
    }
    Ok(ProblemParameters {
        c,
        h,
        a,
        b: -&params.c,
        lo,
        hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn settings() -> SolverSettings {
        SolverSettings::with_tol(1e-9)
    }

    fn square() -> ProblemParameters {
        ProblemParameters::unit_box_lp(dvector![1.0, -1.0])
    }

    #[test]
    fn lagrangian_values() {
        let p = square();
        let z = PrimalDualSolution::new(dvector![0.0, 1.0], dvector![]);
        assert_eq!(lagrangian_value(&z, &p).unwrap(), -1.0);

        let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![-1.0]);
        let z = PrimalDualSolution::new(dvector![1.0, 1.0], dvector![2.0]);
        assert_eq!(lagrangian_value(&z, &p).unwrap(), 2.0);

        let p = square().with_quadratic(DMatrix::identity(2, 2) * 2.0);
        let z = PrimalDualSolution::new(dvector![1.0, 0.0], dvector![]);
        assert_eq!(lagrangian_value(&z, &p).unwrap(), 2.0);
    }

    #[test]
    fn lagrangian_value_dimension_mismatch() {
        let z = PrimalDualSolution::new(dvector![0.0], dvector![]);
        assert!(matches!(
            lagrangian_value(&z, &square()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn divergence_at_optimum_and_vertex() {
        let p = square();
        let s = settings();
        let at_opt = lagrangian_divergence(&dvector![0.0, 1.0], &p, &s).unwrap();
        assert!(at_opt.abs() <= 2.0 * s.tol);
        let d = lagrangian_divergence(&dvector![1.0, 1.0], &p, &s).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_infinite_off_the_equalities() {
        let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![-1.0]);
        let err = lagrangian_divergence(&dvector![0.25, 0.25], &p, &settings()).unwrap_err();
        match err {
            Error::InfiniteDivergence { violation } => assert!((violation - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn lower_proximal_map_on_square() {
        let p = square();
        let s = settings();
        let fwd = solver::solve(&p, &s, None).unwrap();
        let loss = LossSpec::linearized(dvector![-2.0, 0.0]);
        let prox = proximal_map(&p, &loss, &EnvelopeConfig::lower(1.0), &fwd.solution, &s).unwrap();
        assert!((&prox.solution.x - dvector![1.0, 1.0]).amax() < 1e-9);
        let prox =
            proximal_map(&p, &loss, &EnvelopeConfig::lower(0.25), &fwd.solution, &s).unwrap();
        assert!((&prox.solution.x - dvector![0.0, 1.0]).amax() < 1e-9);
    }

    #[test]
    fn zero_gradient_returns_warm_start() {
        let p = square();
        let s = settings();
        let fwd = solver::solve(&p, &s, None).unwrap();
        let loss = LossSpec::linearized(dvector![0.0, 0.0]);
        for tau in [0.1, 1.0, 100.0] {
            let prox =
                proximal_map(&p, &loss, &EnvelopeConfig::lower(tau), &fwd.solution, &s).unwrap();
            assert_eq!(prox.solution.x, fwd.solution.x);
            assert_eq!(prox.iterations, 0);
        }
    }

    #[test]
    fn average_has_no_single_map() {
        let p = square();
        let fwd = solver::solve(&p, &settings(), None).unwrap();
        let loss = LossSpec::linearized(dvector![1.0, 0.0]);
        assert!(matches!(
            proximal_map(&p, &loss, &EnvelopeConfig::average(1.0), &fwd.solution, &settings()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn envelope_on_square_example() {
        let v = envelope_value(
            &square(),
            &LossSpec::linearized(dvector![-2.0, 0.0]),
            &EnvelopeConfig::lower(1.0),
            &settings(),
        )
        .unwrap();
        assert!((v + 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn degenerate_cost_envelope_reaches_loss_minimum() {
        // c = 0 on [0, 1]: every point is optimal, so the envelope of
        // (x - 0.3)^2 tends to its minimum over the optimal set, 0
        let p = ProblemParameters::unit_box_lp(dvector![0.0]);
        let loss = LossSpec::squared(dvector![0.3]);
        let v = envelope_value(&p, &loss, &EnvelopeConfig::lower(1e-4), &settings()).unwrap();
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn upper_quadratic_on_box_lp_uses_separable_path() {
        let p = square();
        let loss = LossSpec::half_squared(dvector![0.5, 0.5]);
        let v = envelope_value(&p, &loss, &EnvelopeConfig::upper(10.0), &settings()).unwrap();
        let fwd = solver::solve(&p, &settings(), None).unwrap();
        assert!(v >= loss.value(&fwd.solution.x, &fwd.solution.x) - 1e-9);
    }

    #[test]
    fn upper_quadratic_with_equalities_is_unsupported() {
        let p = ProblemParameters::unit_box_lp(dvector![1.0, -1.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![-1.0]);
        let loss = LossSpec::half_squared(dvector![0.5, 0.5]);
        let err = envelope_value(&p, &loss, &EnvelopeConfig::upper(10.0), &settings()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedLoss(_)), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(EnvelopeConfig::new(Variant::Lower, 0.0, 0.0).is_err());
        assert!(EnvelopeConfig::new(Variant::Lower, 1.0, -1.0).is_err());
        assert_eq!(
            EnvelopeConfig::new(Variant::Average, 0.5, 0.1).unwrap().id(),
            "average_tau0.5_rho0.1"
        );
        assert_eq!("Upper".parse::<Variant>().unwrap(), Variant::Upper);
    }

    #[test]
    fn dual_reduction_requires_duals() {
        assert!(matches!(dual_loss_reduction(&square()), Err(Error::NoDuals)));
    }
}
