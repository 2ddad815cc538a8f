mod common;

use common::*;
use lpgd::solver::{dual_residual, primal_residual, solve, SolverSettings};
use lpgd::solve_exact_lp;
use rand::Rng;

#[test]
fn agrees_with_vertex_enumeration_on_random_lps() {
    let mut rng = rng(11);
    let tol = 1e-7;
    let settings = SolverSettings::with_tol(tol);
    let mut worst = 0.0f64;
    let mut total_iters = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(0..=n.min(2));
        let p = random_lp(&mut rng, n, m);
        let exact = solve_exact_lp(&p).unwrap();
        let report = solve(&p, &settings, None).unwrap();
        total_iters += report.iterations;
        let err = (&report.solution.x - &exact.x).amax();
        worst = worst.max(err);
        assert!(err <= 10.0 * tol, "n={n} m={m} err={err:e}\n{p:?}");
    }
    eprintln!("worst deviation {worst:e}, mean iterations {}", total_iters / 100);
}

#[test]
fn reported_residuals_match_external_recomputation() {
    let mut rng = rng(12);
    for k in 0..40 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(0..=2);
        let p = if k % 2 == 0 {
            random_lp(&mut rng, n, m)
        } else {
            random_interior_qp(&mut rng, n, m, 0.1)
        };
        let tol = 1e-6;
        let r = solve(&p, &SolverSettings::with_tol(tol), None).unwrap();
        let x = &r.solution.x;
        let prim = primal_residual(&p, x);
        let dual = dual_residual(&p, x, &r.solution.y);
        assert_eq!(prim, r.primal_residual);
        assert_eq!(dual, r.dual_residual);
        assert!(prim.max(dual) <= tol);
        for i in 0..n {
            assert!(x[i] >= p.lo[i] - tol && x[i] <= p.hi[i] + tol);
        }
    }
}

#[test]
fn warm_restart_is_immediate_and_consistent() {
    let mut rng = rng(13);
    for k in 0..30 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(0..=2);
        let p = if k % 2 == 0 {
            random_lp(&mut rng, n, m)
        } else {
            random_interior_qp(&mut rng, n, m, 0.1)
        };
        let settings = SolverSettings::with_tol(1e-7);
        let first = solve(&p, &settings, None).unwrap();
        let again = solve(&p, &settings, Some(&first.solution)).unwrap();
        assert!(again.warm_started);
        assert!(again.iterations <= 2, "took {} iterations", again.iterations);
        assert!((&again.solution.x - &first.solution.x).amax() <= 1e-7);
    }
}

#[test]
fn loose_and_tight_tolerances_agree_on_strongly_convex_qps() {
    let mut rng = rng(14);
    for _ in 0..30 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(0..=2);
        let mut p = random_interior_qp(&mut rng, n, m, 0.1);
        // shrink the box so that some bounds are active
        p.lo.fill(-0.5);
        p.hi.fill(0.5);
        if m > 0 {
            p.b = -(&p.a * nalgebra::DVector::from_element(n, 0.1));
        }
        let loose = solve(&p, &SolverSettings::with_tol(1e-4), None).unwrap();
        let tight = solve(&p, &SolverSettings::with_tol(1e-8), None).unwrap();
        assert!((&loose.solution.x - &tight.solution.x).amax() <= 1e-3);
    }
}
