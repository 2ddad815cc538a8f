//! Forward oracle: an operator-splitting (ADMM) solver for box-constrained
//! QPs/LPs with equality constraints, followed by active-set polishing.
//!
//! The iteration works on the stacked constraint `C x = z` with
//! `C = [A; I]`, `z_eq = -b` and `lo <= z_box <= hi`. Only the equality block
//! of the dual is reported; box multipliers are implicit in the stationarity
//! residual.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::problem::{PrimalDualSolution, ProblemParameters};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Both residuals must fall below this value.
    pub tol: f64,
    pub max_iters: usize,
    /// Try to recover an exact solution by solving the reduced KKT system on
    /// the detected active set.
    pub polish: bool,
    /// Initial ADMM penalty for box rows; equality rows use `1e3 * rho`.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    /// Iterations without primal progress before the dual-growth heuristic
    /// may declare infeasibility.
    pub stagnation_window: usize,
    pub dual_growth_limit: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 50_000,
            polish: true,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho_interval: 50,
            check_interval: 5,
            stagnation_window: 100,
            dual_growth_limit: 1e6,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solution: PrimalDualSolution,
    /// Saddle value `L(x, y, w)` at the returned point.
    pub objective: f64,
    /// `||Ax + b||_inf`.
    pub primal_residual: f64,
    /// `||x - P_box(x - grad_x L)||_inf`.
    pub dual_residual: f64,
    pub iterations: usize,
    pub warm_started: bool,
    pub polished: bool,
}

/// `L(x, y, w) = 1/2 x'Hx + <x, c> + <y, Ax + b>`.
pub fn lagrangian(params: &ProblemParameters, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let eq = if params.m() == 0 {
        0.0
    } else {
        y.dot(&params.equality_residual(x))
    };
    params.objective(x) + eq
}

/// `grad_x L = Hx + c + A'y`.
pub fn lagrangian_gradient_x(
    params: &ProblemParameters,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let mut g = params.h_times(x) + &params.c;
    if params.m() > 0 {
        g += params.a.tr_mul(y);
    }
    g
}

pub fn primal_residual(params: &ProblemParameters, x: &DVector<f64>) -> f64 {
    if params.m() == 0 {
        return 0.0;
    }
    params.equality_residual(x).amax()
}

/// Natural (projected-gradient) stationarity residual; zero iff `x` is a
/// stationary point of `L(., y)` over the box.
pub fn dual_residual(params: &ProblemParameters, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let g = lagrangian_gradient_x(params, x, y);
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(params.lo[i], params.hi[i])).abs())
        .fold(0.0, f64::max)
}

fn make_report(
    params: &ProblemParameters,
    x: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
    warm_started: bool,
    polished: bool,
) -> SolverReport {
    let primal = primal_residual(params, &x);
    let dual = dual_residual(params, &x, &y);
    let objective = lagrangian(params, &x, &y);
    SolverReport {
        solution: PrimalDualSolution { x, y },
        objective,
        primal_residual: primal,
        dual_residual: dual,
        iterations,
        warm_started,
        polished,
    }
}

fn worst(report: &SolverReport) -> f64 {
    report.primal_residual.max(report.dual_residual)
}

/// Solve the saddle-point problem to the requested residual tolerance.
pub fn solve(
    params: &ProblemParameters,
    settings: &SolverSettings,
    warm_start: Option<&PrimalDualSolution>,
) -> Result<SolverReport> {
    params.validate()?;
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "solver tolerance must be positive, got {}",
            settings.tol
        )));
    }
    if let Some(ws) = warm_start {
        if ws.x.len() != params.n() || ws.y.len() != params.m() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has dimensions ({}, {}) but problem has ({}, {})",
                ws.x.len(),
                ws.y.len(),
                params.n(),
                params.m()
            )));
        }
    }
    Admm::new(params, settings, warm_start).run()
}

/// Convenience wrapper with default settings at the given tolerance.
pub fn solve_with_tol(
    params: &ProblemParameters,
    tol: f64,
    warm_start: Option<&PrimalDualSolution>,
    max_iters: usize,
) -> Result<SolverReport> {
    solve(
        params,
        &SolverSettings::with_tol(tol).max_iters(max_iters),
        warm_start,
    )
}

struct Admm<'a> {
    p: &'a ProblemParameters,
    s: &'a SolverSettings,
    n: usize,
    m: usize,
    x: DVector<f64>,
    /// Equality block of `z` is pinned at `-b`; only the box block is stored.
    z_box: DVector<f64>,
    y_eq: DVector<f64>,
    y_box: DVector<f64>,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
    warm: bool,
}

impl<'a> Admm<'a> {
    fn new(
        p: &'a ProblemParameters,
        s: &'a SolverSettings,
        warm_start: Option<&PrimalDualSolution>,
    ) -> Self {
        let (n, m) = (p.n(), p.m());
        let (x, y_eq) = match warm_start {
            Some(ws) => (p.project_to_box(&ws.x), ws.y.clone()),
            None => (p.project_to_box(&DVector::zeros(n)), DVector::zeros(m)),
        };
        let y_box = if warm_start.is_some() {
            -lagrangian_gradient_x(p, &x, &y_eq)
        } else {
            DVector::zeros(n)
        };
        let rho = s.rho;
        let chol = factor(p, s.sigma, rho);
        Self {
            p,
            s,
            n,
            m,
            z_box: x.clone(),
            x,
            y_eq,
            y_box,
            rho,
            chol,
            warm: warm_start.is_some(),
        }
    }

    fn rho_eq(&self) -> f64 {
        1e3 * self.rho
    }

    fn candidate(&self, iterations: usize) -> SolverReport {
        make_report(
            self.p,
            self.p.project_to_box(&self.x),
            self.y_eq.clone(),
            iterations,
            self.warm,
            false,
        )
    }

    fn step(&mut self) {
        let (p, s) = (self.p, self.s);
        let rho_eq = self.rho_eq();
        let mut rhs = &self.x * s.sigma - &p.c + (&self.z_box * self.rho - &self.y_box);
        if self.m > 0 {
            let z_eq = -&p.b;
            rhs += p.a.tr_mul(&(z_eq * rho_eq - &self.y_eq));
        }
        let x_tilde = self.chol.solve(&rhs);
        let alpha = s.alpha;

        if self.m > 0 {
            let z_tilde_eq = &p.a * &x_tilde;
            for j in 0..self.m {
                let z_eq = -p.b[j];
                let relaxed = alpha * z_tilde_eq[j] + (1.0 - alpha) * z_eq;
                self.y_eq[j] += rho_eq * (relaxed - z_eq);
            }
        }
        for i in 0..self.n {
            let relaxed = alpha * x_tilde[i] + (1.0 - alpha) * self.z_box[i];
            let z_new = (relaxed + self.y_box[i] / self.rho).clamp(p.lo[i], p.hi[i]);
            self.y_box[i] += self.rho * (relaxed - z_new);
            self.z_box[i] = z_new;
        }
        self.x = &x_tilde * alpha + &self.x * (1.0 - alpha);
    }

    /// Residuals of the splitting itself, used to balance the penalty.
    fn splitting_residuals(&self) -> (f64, f64, f64, f64) {
        let p = self.p;
        let mut r_prim = (&self.x - &self.z_box).amax();
        let mut cx = self.x.amax().max(self.z_box.amax());
        let mut cty = self.y_box.clone();
        if self.m > 0 {
            let ax = &p.a * &self.x;
            r_prim = r_prim.max((&ax + &p.b).amax());
            cx = cx.max(ax.amax()).max(p.b.amax());
            cty += p.a.tr_mul(&self.y_eq);
        }
        let hx = p.h_times(&self.x);
        let r_dual = (&hx + &p.c + &cty).amax();
        let dual_scale = hx.amax().max(cty.amax()).max(p.c.amax());
        (r_prim, cx, r_dual, dual_scale)
    }

    fn adapt_rho(&mut self) {
        let (r_prim, prim_scale, r_dual, dual_scale) = self.splitting_residuals();
        let num = r_prim / (prim_scale + 1e-10);
        let den = r_dual / (dual_scale + 1e-10);
        if !(num.is_finite() && den.is_finite()) || den <= 0.0 || num <= 0.0 {
            return;
        }
        // a bounded step per adaptation; unbounded jumps can lock the iteration
        // into alternating between two extreme penalties
        let step = (num / den).sqrt().clamp(0.1, 10.0);
        let new_rho = (self.rho * step).clamp(1e-6, 1e6);
        if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
            self.rho = new_rho;
            self.chol = factor(self.p, self.s.sigma, self.rho);
        }
    }

    fn active_set(&self) -> Vec<Bound> {
        let p = self.p;
        (0..self.n)
            .map(|i| {
                if p.lo[i] == p.hi[i] || self.z_box[i] - p.lo[i] < -self.y_box[i] {
                    Bound::Lower
                } else if p.hi[i] - self.z_box[i] < self.y_box[i] {
                    Bound::Upper
                } else {
                    Bound::Free
                }
            })
            .collect()
    }

    fn infeasibility_certificate(&self, dy_eq: &DVector<f64>, dy_box: &DVector<f64>) -> bool {
        let p = self.p;
        let scale = dy_eq.amax().max(dy_box.amax());
        if scale < 1e-8 || self.m == 0 {
            return false;
        }
        let dy_eq = dy_eq / scale;
        let dy_box = dy_box / scale;
        let ct_dy = p.a.tr_mul(&dy_eq) + &dy_box;
        let eps = 1e-6;
        if ct_dy.amax() > eps {
            return false;
        }
        // support function of the constraint set [l, u] along dy
        let mut support = 0.0;
        for j in 0..self.m {
            support += -p.b[j] * dy_eq[j];
        }
        for i in 0..self.n {
            support += if dy_box[i] > 0.0 {
                p.hi[i] * dy_box[i]
            } else {
                p.lo[i] * dy_box[i]
            };
        }
        support < -eps
    }

    fn run(mut self) -> Result<SolverReport> {
        let s = self.s;
        let initial = self.candidate(0);
        if self.warm && worst(&initial) <= s.tol {
            return Ok(initial);
        }
        let mut best = initial;
        let mut last_active: Option<Vec<Bound>> = None;
        let mut last_polished: Option<Vec<Bound>> = None;
        let mut stagnation_ref = (f64::INFINITY, 0usize);
        let mut prev_y = (self.y_eq.clone(), self.y_box.clone());
        let mut cert_hits = 0usize;

        for k in 1..=s.max_iters {
            self.step();
            if s.adaptive_rho_interval > 0 && k % s.adaptive_rho_interval == 0 {
                self.adapt_rho();
            }
            if k % s.check_interval != 0 && k != s.max_iters {
                continue;
            }
            let cand = self.candidate(k);
            if !cand.objective.is_finite() {
                return Err(Error::NonFinite("ADMM iterate diverged".into()));
            }
            if worst(&cand) <= s.tol {
                return Ok(cand);
            }
            if worst(&cand) < worst(&best) {
                best = cand.clone();
            }

            if s.polish {
                let active = self.active_set();
                let stable = last_active.as_ref() == Some(&active);
                if stable && last_polished.as_ref() != Some(&active) {
                    if let Some(polished) = self.polish(&active, k) {
                        if worst(&polished) <= s.tol {
                            return Ok(polished);
                        }
                        if worst(&polished) < worst(&best) {
                            best = polished;
                        }
                    }
                    last_polished = Some(active.clone());
                }
                last_active = Some(active);
            }

            // infeasibility: certificate on the dual increment, or the
            // stagnation-with-dual-growth heuristic
            let dy_eq = &self.y_eq - &prev_y.0;
            let dy_box = &self.y_box - &prev_y.1;
            if cand.primal_residual > s.tol && self.infeasibility_certificate(&dy_eq, &dy_box) {
                cert_hits += 1;
                if cert_hits >= 3 {
                    return Err(Error::InfeasibleProblem(format!(
                        "dual increment certifies primal infeasibility after {k} iterations \
                         (primal residual {:.3e})",
                        cand.primal_residual
                    )));
                }
            } else {
                cert_hits = 0;
            }
            prev_y = (self.y_eq.clone(), self.y_box.clone());

            if cand.primal_residual < 0.99 * stagnation_ref.0 {
                stagnation_ref = (cand.primal_residual, k);
            } else if k - stagnation_ref.1 >= s.stagnation_window
                && cand.primal_residual > s.tol
                && self.y_eq.amax().max(self.y_box.amax()) > s.dual_growth_limit
            {
                return Err(Error::InfeasibleProblem(format!(
                    "primal residual stagnated at {:.3e} over {} iterations while duals grew to {:.3e}",
                    cand.primal_residual,
                    s.stagnation_window,
                    self.y_eq.amax().max(self.y_box.amax())
                )));
            }
        }
        best.iterations = s.max_iters;
        Err(Error::MaxIterationsExceeded(Box::new(best)))
    }

    /// Solve the equality-constrained QP obtained by fixing the active
    /// coordinates at their bounds, with proximal iterative refinement so
    /// that rank-deficient reduced systems still converge.
    fn polish(&self, active: &[Bound], iterations: usize) -> Option<SolverReport> {
        let p = self.p;
        let mut x_fixed = DVector::zeros(self.n);
        let mut free = Vec::new();
        for (i, b) in active.iter().enumerate() {
            match b {
                Bound::Lower => x_fixed[i] = p.lo[i],
                Bound::Upper => x_fixed[i] = p.hi[i],
                Bound::Free => free.push(i),
            }
        }
        let (nf, m) = (free.len(), self.m);
        let hx_fixed = p.h_times(&x_fixed);
        let q: DVector<f64> =
            DVector::from_iterator(nf, free.iter().map(|&i| p.c[i] + hx_fixed[i]));
        let b_bar: DVector<f64> = if m > 0 {
            &p.b + &p.a * &x_fixed
        } else {
            DVector::zeros(0)
        };

        let delta = 1e-9;
        let dim = nf + m;
        if dim == 0 {
            return Some(make_report(p, x_fixed, DVector::zeros(0), iterations, self.warm, true));
        }
        let mut kkt = DMatrix::zeros(dim, dim);
        for (r, &i) in free.iter().enumerate() {
            for (cidx, &j) in free.iter().enumerate() {
                if let Some(h) = &p.h {
                    kkt[(r, cidx)] = h[(i, j)];
                }
            }
            kkt[(r, r)] += delta;
            for j in 0..m {
                kkt[(r, nf + j)] = p.a[(j, i)];
                kkt[(nf + j, r)] = p.a[(j, i)];
            }
        }
        for j in 0..m {
            kkt[(nf + j, nf + j)] = -delta;
        }
        let lu = kkt.lu();

        let mut sol = DVector::zeros(dim);
        for (r, &i) in free.iter().enumerate() {
            sol[r] = self.x[i];
        }
        for j in 0..m {
            sol[nf + j] = self.y_eq[j];
        }
        for _ in 0..12 {
            let mut rhs = DVector::zeros(dim);
            for r in 0..nf {
                rhs[r] = -q[r] + delta * sol[r];
            }
            for j in 0..m {
                rhs[nf + j] = -b_bar[j] - delta * sol[nf + j];
            }
            let next = lu.solve(&rhs)?;
            let change = (&next - &sol).amax();
            sol = next;
            if !sol.iter().all(|v| v.is_finite()) {
                return None;
            }
            if change <= 1e-15 * (1.0 + sol.amax()) {
                break;
            }
        }

        let mut x = x_fixed;
        for (r, &i) in free.iter().enumerate() {
            x[i] = sol[r];
        }
        let x = p.project_to_box(&x);
        let y = DVector::from_iterator(m, (0..m).map(|j| sol[nf + j]));
        Some(make_report(p, x, y, iterations, self.warm, true))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
    Free,
}

fn factor(p: &ProblemParameters, sigma: f64, rho: f64) -> Cholesky<f64, Dyn> {
    let n = p.n();
    let mut mat = match &p.h {
        Some(h) => h.clone(),
        None => DMatrix::zeros(n, n),
    };
    for i in 0..n {
        mat[(i, i)] += sigma + rho;
    }
    if p.m() > 0 {
        mat += p.a.tr_mul(&p.a) * (1e3 * rho);
    }
    mat.cholesky()
        .expect("H + (sigma + rho) I + rho_eq A'A is positive definite for PSD H")
}
