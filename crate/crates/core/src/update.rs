//! Backward-pass updates.
//!
//! LPGD replaces `d loss / d w` by a finite difference of Lagrangian
//! parameter-gradients,
//!
//! ```text
//! lower:  (grad_w L(z_tau) - grad_w L(z*)) / tau,   z_tau = z*(c + tau g)
//! upper:  (grad_w L(z*) - grad_w L(z^tau)) / tau,   z^tau = z*(c - tau g)
//! ```
//!
//! with `grad_w L(x, y) = (c: x, H: x x'/2, A: y x', b: y)`. LPPM is the same
//! construction with the exact loss inside the proximal problem. The closed
//! form special cases (blackbox backpropagation, central differences, the
//! projection limit, SPO+ and Fenchel-Young) are provided alongside.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::{self, EnvelopeConfig, LossSpec, Side, Variant};
use crate::error::{Error, Result};
use crate::problem::{matrix_from_rows, matrix_rows, PrimalDualSolution, ProblemParameters};
use crate::solver::{self, SolverSettings};

/// Which parameter blocks receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask {
    pub c: bool,
    #[serde(rename = "H")]
    pub h: bool,
    #[serde(rename = "A")]
    pub a: bool,
    pub b: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        c: true,
        h: true,
        a: true,
        b: true,
    };
    pub const COST: ParamMask = ParamMask {
        c: true,
        h: false,
        a: false,
        b: false,
    };
    pub const CONSTRAINTS: ParamMask = ParamMask {
        c: false,
        h: false,
        a: true,
        b: true,
    };

    pub fn any(&self) -> bool {
        self.c || self.h || self.a || self.b
    }
}

impl Default for ParamMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Gradient replacement with one block per learnable parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateVector {
    pub d_c: Option<DVector<f64>>,
    pub d_h: Option<DMatrix<f64>>,
    pub d_a: Option<DMatrix<f64>>,
    pub d_b: Option<DVector<f64>>,
}

impl UpdateVector {
    pub fn zeros(n: usize, m: usize, mask: ParamMask) -> Self {
        Self {
            d_c: mask.c.then(|| DVector::zeros(n)),
            d_h: mask.h.then(|| DMatrix::zeros(n, n)),
            d_a: mask.a.then(|| DMatrix::zeros(m, n)),
            d_b: mask.b.then(|| DVector::zeros(m)),
        }
    }

    pub fn mask(&self) -> ParamMask {
        ParamMask {
            c: self.d_c.is_some(),
            h: self.d_h.is_some(),
            a: self.d_a.is_some(),
            b: self.d_b.is_some(),
        }
    }

    /// Blockwise `f(self, other)`; blocks missing on either side are dropped.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        fn vec(a: &Option<DVector<f64>>, b: &Option<DVector<f64>>, f: &dyn Fn(f64, f64) -> f64) -> Option<DVector<f64>> {
            Some(a.as_ref()?.zip_map(b.as_ref()?, f))
        }
        fn mat(a: &Option<DMatrix<f64>>, b: &Option<DMatrix<f64>>, f: &dyn Fn(f64, f64) -> f64) -> Option<DMatrix<f64>> {
            Some(a.as_ref()?.zip_map(b.as_ref()?, f))
        }
        Self {
            d_c: vec(&self.d_c, &other.d_c, &f),
            d_h: mat(&self.d_h, &other.d_h, &f),
            d_a: mat(&self.d_a, &other.d_a, &f),
            d_b: vec(&self.d_b, &other.d_b, &f),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            d_c: self.d_c.as_ref().map(|v| v.map(&f)),
            d_h: self.d_h.as_ref().map(|v| v.map(&f)),
            d_a: self.d_a.as_ref().map(|v| v.map(&f)),
            d_b: self.d_b.as_ref().map(|v| v.map(&f)),
        }
    }

    fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        let c = self.d_c.iter().flat_map(|v| v.iter().copied());
        let h = self.d_h.iter().flat_map(|v| v.iter().copied());
        let a = self.d_a.iter().flat_map(|v| v.iter().copied());
        let b = self.d_b.iter().flat_map(|v| v.iter().copied());
        c.chain(h).chain(a).chain(b)
    }

    /// Largest absolute entry over all blocks.
    pub fn amax(&self) -> f64 {
        self.entries().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm over all blocks (Frobenius for matrices).
    pub fn norm(&self) -> f64 {
        self.entries().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(f64::is_finite)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.zip_with(other, |a, b| a - b).amax()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&UpdateJson::from(self)).expect("update serialization is infallible")
    }

    pub fn from_json_str(s: &str, n: usize) -> Result<Self> {
        let raw: UpdateJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParameters(format!("bad update JSON: {e}")))?;
        let update = Self {
            d_c: raw.c.map(DVector::from_vec),
            d_h: raw.h.as_deref().map(|r| matrix_from_rows(r, n, "H")).transpose()?,
            d_a: raw.a.as_deref().map(|r| matrix_from_rows(r, n, "A")).transpose()?,
            d_b: raw.b.map(DVector::from_vec),
        };
        if !update.is_finite() {
            return Err(Error::NonFinite("update contains non-finite entries".into()));
        }
        Ok(update)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<f64>>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

impl From<&UpdateVector> for UpdateJson {
    fn from(u: &UpdateVector) -> Self {
        Self {
            c: u.d_c.as_ref().map(|v| v.iter().copied().collect()),
            h: u.d_h.as_ref().map(matrix_rows),
            a: u.d_a.as_ref().map(matrix_rows),
            b: u.d_b.as_ref().map(|v| v.iter().copied().collect()),
        }
    }
}

/// `grad_w L(x, y)` restricted to `mask`.
pub fn lagrangian_parameter_gradient(z: &PrimalDualSolution, mask: ParamMask) -> UpdateVector {
    let (x, y) = (&z.x, &z.y);
    UpdateVector {
        d_c: mask.c.then(|| x.clone()),
        d_h: mask.h.then(|| x * x.transpose() * 0.5),
        d_a: mask.a.then(|| y * x.transpose()),
        d_b: mask.b.then(|| y.clone()),
    }
}

/// Gradient form divides the difference by `tau`; finite-difference form
/// returns `tau` times that, i.e. the raw difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UpdateForm {
    #[default]
    Gradient,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOptions {
    pub solver: SolverSettings,
    pub mask: ParamMask,
    pub form: UpdateForm,
}

impl BackwardOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            solver: SolverSettings::with_tol(tol),
            ..Self::default()
        }
    }

    pub fn mask(mut self, mask: ParamMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn form(mut self, form: UpdateForm) -> Self {
        self.form = form;
        self
    }
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            mask: ParamMask::ALL,
            form: UpdateForm::Gradient,
        }
    }
}

/// Assemble an update from already computed proximal points. Passing both
/// gives the average.
pub fn update_from_solutions(
    z_star: &PrimalDualSolution,
    lower: Option<&PrimalDualSolution>,
    upper: Option<&PrimalDualSolution>,
    tau: f64,
    mask: ParamMask,
    form: UpdateForm,
) -> Result<UpdateVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let g_star = lagrangian_parameter_gradient(z_star, mask);
    let finish = |d: UpdateVector| match form {
        UpdateForm::Gradient => d.map(|v| v / tau),
        UpdateForm::FiniteDifference => d,
    };
    let lo = lower.map(|z| finish(lagrangian_parameter_gradient(z, mask).zip_with(&g_star, |a, b| a - b)));
    let up = upper.map(|z| finish(g_star.zip_with(&lagrangian_parameter_gradient(z, mask), |a, b| a - b)));
    let update = match (lo, up) {
        (Some(l), Some(u)) => l.zip_with(&u, |a, b| 0.5 * (a + b)),
        (Some(l), None) => l,
        (None, Some(u)) => u,
        (None, None) => {
            return Err(Error::InvalidConfig("need at least one proximal point".into()))
        }
    };
    if !update.is_finite() {
        return Err(Error::NonFinite("update".into()));
    }
    Ok(update)
}

fn envelope_update(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    loss: &LossSpec,
    config: &EnvelopeConfig,
    opts: &BackwardOptions,
) -> Result<UpdateVector> {
    config.validate()?;
    let prox = |side: Side| {
        envelope::proximal_point(params, loss, side, config.tau, config.rho, z_star, &opts.solver)
            .map(|r| r.solution)
    };
    let (lower, upper) = match config.variant {
        Variant::Lower => (Some(prox(Side::Lower)?), None),
        Variant::Upper => (None, Some(prox(Side::Upper)?)),
        Variant::Average => (Some(prox(Side::Lower)?), Some(prox(Side::Upper)?)),
    };
    update_from_solutions(
        z_star,
        lower.as_ref(),
        upper.as_ref(),
        config.tau,
        opts.mask,
        opts.form,
    )
}

/// LPGD update for the loss linearized at `x*` with gradient `grad_loss`.
pub fn lpgd_update(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    grad_loss: &DVector<f64>,
    config: &EnvelopeConfig,
    opts: &BackwardOptions,
) -> Result<UpdateVector> {
    let loss = LossSpec::linearized(grad_loss.clone());
    envelope_update(params, z_star, &loss, config, opts)
}

/// LPPM update: the exact quadratic loss enters the proximal problem.
pub fn lppm_update(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    loss: &LossSpec,
    config: &EnvelopeConfig,
    opts: &BackwardOptions,
) -> Result<UpdateVector> {
    if !matches!(loss, LossSpec::QuadraticMse { .. }) {
        return Err(Error::UnsupportedLoss(
            "the exact-loss update needs a quadratic loss; use lpgd_update for linearized losses"
                .into(),
        ));
    }
    envelope_update(params, z_star, loss, config, opts)
}

/// Blackbox backpropagation, `(x*(c + tau g) - x*(c)) / tau` in the cost
/// block. On LPs this coincides with the lower LPGD update.
pub fn bb_update(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    grad_loss: &DVector<f64>,
    tau: f64,
    opts: &BackwardOptions,
) -> Result<UpdateVector> {
    if !params.is_lp() {
        return Err(Error::InvalidParameters(
            "blackbox backpropagation is defined for LPs".into(),
        ));
    }
    lpgd_update(params, z_star, grad_loss, &EnvelopeConfig::lower(tau), opts)
}

/// Two-sided difference `(grad_w L(z_tau) - grad_w L(z^tau)) / (2 tau)` for
/// regularized problems.
pub fn central_difference_update(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    grad_loss: &DVector<f64>,
    tau: f64,
    opts: &BackwardOptions,
) -> Result<UpdateVector> {
    if params.is_lp() {
        return Err(Error::InvalidParameters(
            "central differences expect a quadratic regularizer H".into(),
        ));
    }
    lpgd_update(params, z_star, grad_loss, &EnvelopeConfig::average(tau), opts)
}

/// Large-`tau` limit with augmentation: `clip(x* - rho g, lo, hi) - x*`.
///
/// # Panics
/// If the vectors differ in length.
pub fn projection_limit_update(
    x_star: &DVector<f64>,
    grad_loss: &DVector<f64>,
    rho: f64,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> DVector<f64> {
    assert!(
        grad_loss.len() == x_star.len() && lo.len() == x_star.len() && hi.len() == x_star.len(),
        "length mismatch"
    );
    DVector::from_fn(x_star.len(), |i, _| {
        (x_star[i] - rho * grad_loss[i]).clamp(lo[i], hi[i]) - x_star[i]
    })
}

/// Gradient of the SPO+ loss with respect to the predicted cost,
/// `2 (x*(c_true) - x*(2 c_pred - c_true))`.
pub fn spo_plus_gradient(
    params: &ProblemParameters,
    c_pred: &DVector<f64>,
    c_true: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    if !params.is_lp() {
        return Err(Error::InvalidParameters("SPO+ is defined for LPs".into()));
    }
    let n = params.n();
    if c_pred.len() != n || c_true.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "costs must have length {n}"
        )));
    }
    let solve_at = |c: DVector<f64>| -> Result<DVector<f64>> {
        let mut p = params.clone();
        p.c = c;
        Ok(solver::solve(&p, settings, None)?.solution.x)
    };
    let x_true = solve_at(c_true.clone())?;
    let x_half = solve_at(c_pred * 2.0 - c_true)?;
    Ok((x_true - x_half) * 2.0)
}

/// Fenchel-Young gradient `x_true - x*` for the regularized problem.
pub fn fenchel_young_gradient(
    x_star_regularized: &DVector<f64>,
    x_true: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x_star_regularized.len() != x_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "x* has length {} but x_true has {}",
            x_star_regularized.len(),
            x_true.len()
        )));
    }
    Ok(x_true - x_star_regularized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn opts() -> BackwardOptions {
        BackwardOptions::with_tol(1e-9)
    }

    fn square() -> ProblemParameters {
        ProblemParameters::unit_box_lp(dvector![1.0, -1.0])
    }

    #[test]
    fn square_lower_update() {
        let p = square();
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let u = lpgd_update(&p, &z, &dvector![-2.0, 0.0], &EnvelopeConfig::lower(1.0), &opts())
            .unwrap();
        assert!((u.d_c.as_ref().unwrap() - dvector![1.0, 0.0]).amax() < 1e-9);
        let bb = bb_update(&p, &z, &dvector![-2.0, 0.0], 1.0, &opts()).unwrap();
        assert_eq!(bb, u);
    }

    #[test]
    fn zero_gradient_gives_zero_update() {
        let p = square();
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        for cfg in [
            EnvelopeConfig::lower(0.3),
            EnvelopeConfig::upper(3.0),
            EnvelopeConfig::average(1.0).with_rho(0.5),
        ] {
            let u = lpgd_update(&p, &z, &dvector![0.0, 0.0], &cfg, &opts()).unwrap();
            assert_eq!(u.amax(), 0.0);
        }
    }

    #[test]
    fn identity_hessian_interior_is_exact() {
        let c = dvector![0.5, -1.5];
        let p = ProblemParameters::box_lp(c, dvector![-10.0, -10.0], dvector![10.0, 10.0])
            .with_quadratic(DMatrix::identity(2, 2));
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let g = dvector![0.7, -0.2];
        for tau in [1e-3, 0.1, 1.0, 5.0] {
            let u = lpgd_update(&p, &z, &g, &EnvelopeConfig::lower(tau), &opts()).unwrap();
            assert!((u.d_c.unwrap() + &g).amax() < 1e-7, "tau = {tau}");
            let cd = central_difference_update(&p, &z, &g, tau, &opts()).unwrap();
            assert!((cd.d_c.unwrap() + &g).amax() < 1e-7, "tau = {tau}");
        }
    }

    #[test]
    fn finite_difference_form_scales_by_tau() {
        let p = square();
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let g = dvector![-2.0, 0.0];
        let cfg = EnvelopeConfig::lower(0.5);
        let grad = lpgd_update(&p, &z, &g, &cfg, &opts()).unwrap();
        let fd = lpgd_update(&p, &z, &g, &cfg, &opts().form(UpdateForm::FiniteDifference)).unwrap();
        assert!(grad.map(|v| v * 0.5).max_abs_diff(&fd) < 1e-15);
    }

    #[test]
    fn tiny_tau_does_not_move_vertex() {
        let p = square();
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let u = bb_update(&p, &z, &dvector![-2.0, 0.5], 1e-9, &opts()).unwrap();
        assert_eq!(u.d_c.unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn mask_controls_blocks() {
        let p = square().with_equalities(dmatrix![1.0, 1.0], dvector![-1.0]);
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let u = lpgd_update(
            &p,
            &z,
            &dvector![1.0, 0.0],
            &EnvelopeConfig::lower(1.0),
            &opts().mask(ParamMask::CONSTRAINTS),
        )
        .unwrap();
        assert_eq!(u.mask(), ParamMask::CONSTRAINTS);
        assert_eq!(u.d_a.as_ref().unwrap().shape(), (1, 2));
    }

    #[test]
    fn projection_limit_example() {
        let d = projection_limit_update(
            &dvector![0.0, 1.0],
            &dvector![-2.0, 0.0],
            0.25,
            &dvector![0.0, 0.0],
            &dvector![1.0, 1.0],
        );
        assert_eq!(d, dvector![0.5, 0.0]);
    }

    #[test]
    fn spo_plus_one_dimensional() {
        let p = ProblemParameters::unit_box_lp(dvector![0.0]);
        let g = spo_plus_gradient(&p, &dvector![1.0], &dvector![-1.0], &opts().solver).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        // 2 c_pred - c_true = c_true: both solves coincide
        let g = spo_plus_gradient(&p, &dvector![-1.0], &dvector![-1.0], &opts().solver).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn fenchel_young_closed_form() {
        // Omega = 1/2 ||x||^2 unconstrained: x*(c) = -c
        let c = dvector![0.3, -1.2];
        let x_true = dvector![1.0, 0.0];
        let g = fenchel_young_gradient(&(-&c), &x_true).unwrap();
        assert_eq!(g, &x_true + &c);
        assert!(fenchel_young_gradient(&dvector![1.0], &x_true).is_err());
    }

    #[test]
    fn lppm_rejects_linearized_loss() {
        let p = square();
        let z = solver::solve(&p, &opts().solver, None).unwrap().solution;
        let loss = LossSpec::linearized(dvector![1.0, 0.0]);
        assert!(matches!(
            lppm_update(&p, &z, &loss, &EnvelopeConfig::lower(1.0), &opts()),
            Err(Error::UnsupportedLoss(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let u = UpdateVector {
            d_c: Some(dvector![0.1, -0.2]),
            d_h: None,
            d_a: Some(dmatrix![1.0, 2.0]),
            d_b: Some(dvector![3.0]),
        };
        let text = u.to_json_string();
        assert!(text.contains("\"A\"") && !text.contains("\"H\""));
        assert_eq!(UpdateVector::from_json_str(&text, 2).unwrap(), u);
    }
}
