//! True gradients through the solution map via the linearized KKT system.
//!
//! Box constraints are handled through the active set: coordinates sitting
//! at a bound are held fixed, and the remaining free coordinates together
//! with the equality duals satisfy
//!
//! ```text
//! [ H_FF + I/rho   A_F' ] [dx_F]     [ dH x + dc + dA' y ]_F
//! [ A_F            0    ] [dy  ] = - [ dA x + db         ]
//! ```
//!
//! The `I/rho` term comes from augmenting the Lagrangian with
//! `||x - x*||^2 / (2 rho)` and is omitted for `rho == 0`. The adjoint system
//! is solved once and contracted with the parameter derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{PrimalDualSolution, ProblemParameters};
use crate::update::{ParamMask, UpdateVector};

/// Condition numbers above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// What to do with coordinates at a bound whose multiplier is (near) zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComplementarityPolicy {
    /// Report `StrictComplementarityViolated`.
    #[default]
    Strict,
    /// Hold such coordinates fixed like strictly active ones.
    TreatWeakAsActive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitOptions {
    /// Augmentation strength; `0` adds no regularizer.
    pub rho: f64,
    /// Bound-activity and multiplier threshold.
    pub tol: f64,
    pub policy: ComplementarityPolicy,
    pub mask: ParamMask,
}

impl ImplicitOptions {
    pub fn new(rho: f64, tol: f64) -> Self {
        Self {
            rho,
            tol,
            policy: ComplementarityPolicy::Strict,
            mask: ParamMask::ALL,
        }
    }

    pub fn policy(mut self, policy: ComplementarityPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn mask(mut self, mask: ParamMask) -> Self {
        self.mask = mask;
        self
    }
}

/// Reduced KKT Jacobian at a solution.
#[derive(Debug, Clone)]
pub struct KktSystem {
    /// Symmetric matrix of size `free.len() + m`.
    pub jacobian: DMatrix<f64>,
    /// Coordinates strictly inside the box.
    pub free: Vec<usize>,
    /// Coordinates held at a bound.
    pub active: Vec<usize>,
    /// Ratio of extreme singular values (`inf` if singular, `1` if empty).
    pub condition: f64,
}

impl KktSystem {
    pub fn build(
        params: &ProblemParameters,
        z_star: &PrimalDualSolution,
        opts: &ImplicitOptions,
    ) -> Result<Self> {
        params.check_dimensions()?;
        let (n, m) = (params.n(), params.m());
        let (x, y) = (&z_star.x, &z_star.y);
        if x.len() != n || y.len() != m {
            return Err(Error::DimensionMismatch(
                "solution does not match the problem dimensions".into(),
            ));
        }
        if !(opts.rho >= 0.0) || !(opts.tol > 0.0) {
            return Err(Error::InvalidConfig("need rho >= 0 and tol > 0".into()));
        }
        // stationarity residual Hx + c + A'y = -(box multipliers)
        let r = params.h_times(x) + &params.c + params.a.transpose() * y;
        let mut free = Vec::new();
        let mut active = Vec::new();
        for i in 0..n {
            let at_lo = x[i] - params.lo[i] <= opts.tol;
            let at_hi = params.hi[i] - x[i] <= opts.tol;
            if !(at_lo || at_hi) {
                free.push(i);
                continue;
            }
            // pushing against the bound that is active
            let multiplier = if at_lo { r[i] } else { -r[i] };
            if multiplier <= opts.tol && opts.policy == ComplementarityPolicy::Strict {
                return Err(Error::StrictComplementarityViolated {
                    index: i,
                    multiplier,
                });
            }
            active.push(i);
        }

        let k = free.len();
        let reg = if opts.rho > 0.0 { 1.0 / opts.rho } else { 0.0 };
        let mut jac = DMatrix::zeros(k + m, k + m);
        for (a, &i) in free.iter().enumerate() {
            if let Some(h) = &params.h {
                for (b, &j) in free.iter().enumerate() {
                    jac[(a, b)] = h[(i, j)];
                }
            }
            jac[(a, a)] += reg;
            for row in 0..m {
                jac[(a, k + row)] = params.a[(row, i)];
                jac[(k + row, a)] = params.a[(row, i)];
            }
        }
        let condition = condition_number(&jac);
        Ok(Self {
            jacobian: jac,
            free,
            active,
            condition,
        })
    }

    /// Solve `J s = rhs`. Well-conditioned systems use LU with one round of
    /// iterative refinement. Singular ones fail without regularization and
    /// fall back to the minimum-norm least-squares solution with it.
    fn solve(&self, rhs: &DVector<f64>, regularized: bool) -> Result<DVector<f64>> {
        if rhs.is_empty() {
            return Ok(DVector::zeros(0));
        }
        if self.condition <= SINGULAR_CONDITION {
            let lu = self.jacobian.clone().lu();
            if let Some(mut s) = lu.solve(rhs) {
                let residual = rhs - &self.jacobian * &s;
                if let Some(ds) = lu.solve(&residual) {
                    s += ds;
                }
                return Ok(s);
            }
        }
        if !regularized {
            return Err(Error::SingularSystem {
                condition: self.condition,
            });
        }
        let svd = self.jacobian.clone().svd(true, true);
        let cutoff = svd.singular_values.max() / SINGULAR_CONDITION;
        svd.solve(rhs, cutoff)
            .map_err(|_| Error::SingularSystem {
                condition: self.condition,
            })
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let s = m.clone().singular_values();
    let (max, min) = (s.max(), s.min());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Debug, Clone)]
pub struct ImplicitReport {
    pub update: UpdateVector,
    pub condition: f64,
    pub free: Vec<usize>,
    pub active: Vec<usize>,
}

/// Gradient of `l(x*(w))` with respect to every parameter block, given
/// `grad_loss = grad l(x*)`. Strict complementarity is required.
pub fn implicit_gradient_qp(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    grad_loss: &DVector<f64>,
    rho: f64,
    tol: f64,
) -> Result<UpdateVector> {
    implicit_gradient(params, z_star, grad_loss, &ImplicitOptions::new(rho, tol)).map(|r| r.update)
}

pub fn implicit_gradient(
    params: &ProblemParameters,
    z_star: &PrimalDualSolution,
    grad_loss: &DVector<f64>,
    opts: &ImplicitOptions,
) -> Result<ImplicitReport> {
    let (n, m) = (params.n(), params.m());
    if grad_loss.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "loss gradient has length {} but expected {n}",
            grad_loss.len()
        )));
    }
    let kkt = KktSystem::build(params, z_star, opts)?;
    let k = kkt.free.len();
    let mut rhs = DVector::zeros(k + m);
    for (a, &i) in kkt.free.iter().enumerate() {
        rhs[a] = grad_loss[i];
    }
    let adjoint = kkt.solve(&rhs, opts.rho > 0.0)?;

    let mut lx = DVector::zeros(n);
    for (a, &i) in kkt.free.iter().enumerate() {
        lx[i] = adjoint[a];
    }
    let ly = adjoint.rows(k, m).into_owned();
    let (x, y) = (&z_star.x, &z_star.y);
    let mask = opts.mask;
    let update = UpdateVector {
        d_c: mask.c.then(|| -&lx),
        d_h: mask.h.then(|| {
            let outer = &lx * x.transpose();
            (&outer + outer.transpose()) * -0.5
        }),
        d_a: mask.a.then(|| -(y * lx.transpose() + &ly * x.transpose())),
        d_b: mask.b.then(|| -&ly),
    };
    if !update.is_finite() {
        return Err(Error::NonFinite("implicit gradient".into()));
    }
    Ok(ImplicitReport {
        update,
        condition: kkt.condition,
        free: kkt.free,
        active: kkt.active,
    })
}
