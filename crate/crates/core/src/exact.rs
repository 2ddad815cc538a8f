//! Exhaustive vertex enumeration for tiny LPs. Used as a test oracle.
//!
//! A vertex of `{x in [lo, hi] : Ax + b = 0}` fixes every coordinate outside
//! some support set `S` (with `|S| <= m`) at a bound and determines `x_S`
//! uniquely from the equalities. All such candidates are enumerated; among
//! the optimal ones the lexicographically smallest `x` wins.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{PrimalDualSolution, ProblemParameters};

pub const MAX_ENUM_VARS: usize = 16;
pub const MAX_ENUM_EQUALITIES: usize = 4;
const FEAS_TOL: f64 = 1e-12;

pub fn solve_exact_lp(params: &ProblemParameters) -> Result<PrimalDualSolution> {
    params.validate()?;
    if !params.is_lp() {
        return Err(Error::InvalidParameters(
            "exact enumeration only handles LPs (H must be absent)".into(),
        ));
    }
    let (n, m) = (params.n(), params.m());
    if n > MAX_ENUM_VARS || m > MAX_ENUM_EQUALITIES {
        return Err(Error::TooLarge(format!(
            "n = {n}, m = {m} exceeds n <= {MAX_ENUM_VARS}, m <= {MAX_ENUM_EQUALITIES}"
        )));
    }

    let vertices = enumerate_vertices(params);
    if vertices.is_empty() {
        return Err(Error::InfeasibleProblem(
            "no box point satisfies the equality constraints".into(),
        ));
    }
    let values: Vec<f64> = vertices.iter().map(|v| v.dot(&params.c)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = 1.0 + best.abs();
    let x = vertices
        .into_iter()
        .zip(values)
        .filter(|(_, v)| *v <= best + 1e-12 * scale)
        .map(|(x, _)| x)
        .min_by(lexicographic)
        .expect("at least one optimal vertex");
    let y = equality_duals(params, &x);
    Ok(PrimalDualSolution { x, y })
}

/// All vertices of the feasible polytope (possibly with repeats removed).
pub fn enumerate_vertices(params: &ProblemParameters) -> Vec<DVector<f64>> {
    let (n, m) = (params.n(), params.m());
    let mut out: Vec<DVector<f64>> = Vec::new();
    for support in subsets_up_to(n, m) {
        let fixed: Vec<usize> = (0..n).filter(|i| !support.contains(i)).collect();
        for mask in 0u64..(1u64 << fixed.len()) {
            let mut x = DVector::zeros(n);
            for (bit, &i) in fixed.iter().enumerate() {
                x[i] = if mask >> bit & 1 == 1 {
                    params.hi[i]
                } else {
                    params.lo[i]
                };
            }
            if let Some(x) = complete_support(params, &support, x) {
                if !out.iter().any(|v| (v - &x).amax() <= FEAS_TOL) {
                    out.push(x);
                }
            }
        }
    }
    out
}

fn complete_support(
    params: &ProblemParameters,
    support: &[usize],
    mut x: DVector<f64>,
) -> Option<DVector<f64>> {
    let m = params.m();
    if support.is_empty() {
        if m == 0 || params.equality_residual(&x).amax() <= FEAS_TOL {
            return Some(x);
        }
        return None;
    }
    let k = support.len();
    let a_s = DMatrix::from_fn(m, k, |r, c| params.a[(r, support[c])]);
    let rhs = -(&params.a * &x + &params.b);
    let svd = a_s.clone().svd(true, true);
    let smax = svd.singular_values.max();
    // require full column rank so that x_S is uniquely determined
    if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return None;
    }
    let xs = svd.solve(&rhs, 0.0).ok()?;
    if (&a_s * &xs - &rhs).amax() > FEAS_TOL * (1.0 + rhs.amax()) {
        return None;
    }
    for (c, &i) in support.iter().enumerate() {
        let v = xs[c];
        if v < params.lo[i] - FEAS_TOL || v > params.hi[i] + FEAS_TOL {
            return None;
        }
        x[i] = v.clamp(params.lo[i], params.hi[i]);
    }
    Some(x)
}

/// Least-squares equality duals from stationarity on the coordinates
/// strictly inside the box. Unique when those columns of `A` have full row
/// rank; otherwise the minimum-norm estimate.
fn equality_duals(params: &ProblemParameters, x: &DVector<f64>) -> DVector<f64> {
    let m = params.m();
    if m == 0 {
        return DVector::zeros(0);
    }
    let free: Vec<usize> = (0..params.n())
        .filter(|&i| x[i] > params.lo[i] + FEAS_TOL && x[i] < params.hi[i] - FEAS_TOL)
        .collect();
    if free.is_empty() {
        return DVector::zeros(m);
    }
    // A_F' y = -c_F
    let at = DMatrix::from_fn(free.len(), m, |r, j| params.a[(j, free[r])]);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -params.c[i]));
    at.svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(m))
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

fn subsets_up_to(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_size.min(n) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..n {
                let mut t: Vec<usize> = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn two_dim_box() {
        let p = ProblemParameters::unit_box_lp(dvector![1.0, -1.0]);
        assert_eq!(solve_exact_lp(&p).unwrap().x, dvector![0.0, 1.0]);
    }

    #[test]
    fn zero_cost_breaks_ties_lexicographically() {
        let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.0]);
        assert_eq!(solve_exact_lp(&p).unwrap().x, dvector![0.0, 0.0]);
    }

    #[test]
    fn simplex_slice_tie_break() {
        let p = ProblemParameters::unit_box_lp(dvector![-1.0, -1.0, -1.0])
            .with_equalities(dmatrix![1.0, 1.0, 1.0], dvector![-1.0]);
        let sol = solve_exact_lp(&p).unwrap();
        assert_eq!(sol.x, dvector![0.0, 0.0, 1.0]);
    }

    #[test]
    fn simplex_slice_vertices() {
        let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.0, 0.0])
            .with_equalities(dmatrix![1.0, 1.0, 1.0], dvector![-1.0]);
        assert_eq!(enumerate_vertices(&p).len(), 3);
    }

    #[test]
    fn infeasible_equalities() {
        let p = ProblemParameters::unit_box_lp(dvector![1.0, 1.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![-3.0]);
        assert!(matches!(solve_exact_lp(&p), Err(Error::InfeasibleProblem(_))));
    }

    #[test]
    fn too_large() {
        let p = ProblemParameters::unit_box_lp(DVector::zeros(17));
        assert!(matches!(solve_exact_lp(&p), Err(Error::TooLarge(_))));
    }

    #[test]
    fn rejects_qp() {
        let p = ProblemParameters::unit_box_lp(dvector![1.0]).with_quadratic(dmatrix![1.0]);
        assert!(solve_exact_lp(&p).is_err());
    }

    #[test]
    fn duals_of_nondegenerate_vertex() {
        // min -x1 - 2 x2 s.t. x1 + x2 = 1.5 on the unit box: x = (0.5, 1),
        // x1 free, so y solves y = -c1 = 1
        let p = ProblemParameters::unit_box_lp(dvector![-1.0, -2.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![-1.5]);
        let sol = solve_exact_lp(&p).unwrap();
        assert!((&sol.x - dvector![0.5, 1.0]).amax() < 1e-12);
        assert!((sol.y[0] - 1.0).abs() < 1e-12);
    }
}
