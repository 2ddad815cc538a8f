mod common;

use common::*;
use lpgd::envelope::{proximal_point, LossSpec, Side};
use lpgd::update::{
    central_difference_update, fenchel_young_gradient, lppm_update, update_from_solutions,
};
use lpgd::{
    implicit_gradient_qp, lpgd_update, solve, solve_exact_lp, BackwardOptions, EnvelopeConfig,
    ParamMask, PrimalDualSolution, ProblemParameters, SolverSettings, UpdateForm, UpdateVector,
};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;

#[test]
fn lower_and_upper_are_sign_symmetric() {
    let opts = BackwardOptions::with_tol(1e-9);
    let mut rng = rng(31);
    for k in 0..30 {
        let n = rng.random_range(2..=5);
        let p = if k % 2 == 0 {
            random_lp(&mut rng, n, 1)
        } else {
            random_interior_qp(&mut rng, n, 1, 0.2)
        };
        let z = solve(&p, &opts.solver, None).unwrap().solution;
        let g = gaussian_vec(&mut rng, n);
        let tau = rng.random_range(0.1..3.0);
        let lower = lpgd_update(&p, &z, &g, &EnvelopeConfig::lower(tau), &opts).unwrap();
        let upper = lpgd_update(&p, &z, &-&g, &EnvelopeConfig::upper(tau), &opts).unwrap();
        assert_eq!(lower, upper.map(|v| -v));
    }
}

#[test]
fn square_example_lower_update() {
    let p = ProblemParameters::unit_box_lp(dvector![1.0, -1.0]);
    let opts = BackwardOptions::with_tol(1e-10).mask(ParamMask::COST);
    let z = solve(&p, &opts.solver, None).unwrap().solution;
    let u = lpgd_update(&p, &z, &dvector![-2.0, 0.0], &EnvelopeConfig::lower(1.0), &opts).unwrap();
    assert!((u.d_c.unwrap() - dvector![1.0, 0.0]).amax() < 1e-9);
    let u = lpgd_update(&p, &z, &dvector![-2.0, 0.0], &EnvelopeConfig::lower(0.25), &opts).unwrap();
    assert!(u.d_c.unwrap().amax() < 1e-9);
}

#[test]
fn frank_wolfe_limit_on_lps_with_equalities() {
    let settings = SolverSettings::with_tol(1e-10);
    let mut rng = rng(32);
    for _ in 0..20 {
        let n = rng.random_range(2..=5);
        let p = random_lp(&mut rng, n, 2.min(n - 1));
        let z = solve(&p, &settings, None).unwrap().solution;
        let g = gaussian_vec(&mut rng, n);
        let x = proximal_point(&p, &LossSpec::linearized(g.clone()), Side::Lower, 1e6, 0.0, &z, &settings)
            .unwrap()
            .solution
            .x;
        let mut fw = p.clone();
        fw.c = g;
        assert!((x - solve_exact_lp(&fw).unwrap().x).amax() < 1e-5);
    }
}

#[test]
fn upper_large_tau_limit_maximizes_the_gradient() {
    let settings = SolverSettings::with_tol(1e-10);
    let mut rng = rng(33);
    for _ in 0..20 {
        let p = random_lp(&mut rng, 4, 1);
        let z = solve(&p, &settings, None).unwrap().solution;
        let g = gaussian_vec(&mut rng, 4);
        let x = proximal_point(&p, &LossSpec::linearized(g.clone()), Side::Upper, 1e6, 0.0, &z, &settings)
            .unwrap()
            .solution
            .x;
        let mut fw = p.clone();
        fw.c = -g;
        assert!((x - solve_exact_lp(&fw).unwrap().x).amax() < 1e-5);
    }
}

#[test]
fn lppm_at_large_tau_points_towards_the_target() {
    // an LP over the unit box with the target on a vertex: the exact-loss
    // proximal point approaches the target, so the finite difference is
    // x_true - x*
    let opts = BackwardOptions::with_tol(1e-10).mask(ParamMask::COST).form(UpdateForm::FiniteDifference);
    let mut rng = rng(34);
    for _ in 0..20 {
        let n = 4;
        let p = ProblemParameters::unit_box_lp(gaussian_vec(&mut rng, n));
        let z = solve(&p, &opts.solver, None).unwrap().solution;
        let x_true = DVector::from_fn(n, |_, _| f64::from(rng.random_bool(0.5)));
        let loss = LossSpec::half_squared(x_true.clone());
        let u = lppm_update(&p, &z, &loss, &EnvelopeConfig::lower(1e6), &opts).unwrap();
        let fy = fenchel_young_gradient(&z.x, &x_true).unwrap();
        assert!((u.d_c.unwrap() - fy).amax() < 1e-3);
    }
}

#[test]
fn lppm_vanishes_when_the_target_is_optimal() {
    let opts = BackwardOptions::with_tol(1e-10);
    let mut rng = rng(35);
    for _ in 0..10 {
        let p = random_interior_qp(&mut rng, 3, 1, 0.3);
        let z = solve(&p, &opts.solver, None).unwrap().solution;
        let loss = LossSpec::half_squared(z.x.clone());
        for cfg in [EnvelopeConfig::lower(0.7), EnvelopeConfig::average(2.0).with_rho(0.3)] {
            let u = lppm_update(&p, &z, &loss, &cfg, &opts).unwrap();
            assert!(u.amax() <= 4.0 * opts.solver.tol / cfg.tau.min(1.0), "{:e}", u.amax());
        }
    }
}

#[test]
fn towards_better_update_on_a_segment() {
    // X = [0, 1]^2 cut by x1 + x2 = 1 has the two vertices (1, 0), (0, 1).
    // With c = (0, 0.2) the forward solution is (1, 0) and l = ||x - (0, 1)||^2
    // prefers the other vertex. The lower proximal problem minimizes
    // <x, c> + tau l(x); for tau = 0.5 its optimum is (0, 1).
    let p = ProblemParameters::unit_box_lp(dvector![0.0, 0.2]).with_equalities(dmatrix![1.0, 1.0], dvector![-1.0]);
    let opts = BackwardOptions::with_tol(1e-10).mask(ParamMask::COST);
    let z = solve(&p, &opts.solver, None).unwrap().solution;
    assert!((&z.x - dvector![1.0, 0.0]).amax() < 1e-9);
    let loss = LossSpec::squared(dvector![0.0, 1.0]);
    let tau = 0.5;
    let u = lppm_update(&p, &z, &loss, &EnvelopeConfig::lower(tau), &opts).unwrap();
    // minimize 0.2 x2 + 0.5 ((x1)^2 + (x2 - 1)^2) on x1 = 1 - x2:
    // 0.2 t + (1 - t)^2 with t = x2 gives t = 0.9
    let x_tau = dvector![0.1, 0.9];
    let expected = (&x_tau - &z.x) / tau;
    assert!((u.d_c.unwrap() - expected).amax() < 1e-7);
}

#[test]
fn central_differences_approach_the_implicit_gradient() {
    let opts = BackwardOptions::with_tol(1e-11);
    let mut rng = rng(36);
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let p = random_interior_qp(&mut rng, n, 1, 0.5);
        let z = solve(&p, &opts.solver, None).unwrap().solution;
        let g = gaussian_vec(&mut rng, n);
        let cd = central_difference_update(&p, &z, &g, 1e-4, &opts).unwrap();
        let oracle = implicit_gradient_qp(&p, &z, &g, 0.0, 1e-9).unwrap();
        assert!(cd.max_abs_diff(&oracle) < 1e-3);
    }
}

#[test]
fn update_from_solutions_matches_lpgd_update() {
    let opts = BackwardOptions::with_tol(1e-10);
    let mut rng = rng(37);
    let p = random_lp(&mut rng, 4, 1);
    let z = solve(&p, &opts.solver, None).unwrap().solution;
    let g = gaussian_vec(&mut rng, 4);
    let loss = LossSpec::linearized(g.clone());
    let prox = |side| proximal_point(&p, &loss, side, 0.8, 0.0, &z, &opts.solver).unwrap().solution;
    let (lo, up) = (prox(Side::Lower), prox(Side::Upper));
    let manual = update_from_solutions(&z, Some(&lo), Some(&up), 0.8, ParamMask::ALL, UpdateForm::Gradient).unwrap();
    let direct = lpgd_update(&p, &z, &g, &EnvelopeConfig::average(0.8), &opts).unwrap();
    assert_eq!(manual, direct);
}

#[test]
fn parameter_blocks_follow_the_lagrangian_gradient() {
    // moving from z* to z_tau changes y x' and y; check the A and b blocks
    let z_star = PrimalDualSolution::new(dvector![1.0, 0.0], dvector![2.0]);
    let z_tau = PrimalDualSolution::new(dvector![0.0, 1.0], dvector![3.0]);
    let u = update_from_solutions(&z_star, Some(&z_tau), None, 0.5, ParamMask::ALL, UpdateForm::Gradient).unwrap();
    assert_eq!(u.d_c.unwrap(), dvector![-2.0, 2.0]);
    assert_eq!(u.d_b.unwrap(), dvector![2.0]);
    assert_eq!(u.d_a.unwrap(), dmatrix![-4.0, 6.0]);
    assert_eq!(u.d_h.unwrap(), DMatrix::from_diagonal(&dvector![-1.0, 1.0]));
}

#[test]
fn json_schema_uses_problem_block_names() {
    let u = UpdateVector::zeros(2, 1, ParamMask::ALL);
    let json = u.to_json_string();
    for key in ["\"c\"", "\"H\"", "\"A\"", "\"b\""] {
        assert!(json.contains(key), "{json}");
    }
    assert_eq!(UpdateVector::from_json_str(&json, 2).unwrap(), u);
}
