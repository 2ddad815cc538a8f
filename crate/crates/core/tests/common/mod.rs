#![allow(dead_code)]

use lpgd::ProblemParameters;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// `B B' / n + floor * I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = gaussian_mat(rng, n, n);
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Random LP on a random box with `m` equalities through an interior point.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ProblemParameters {
    let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
    let hi = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    let c = gaussian_vec(rng, n);
    let mut p = ProblemParameters::box_lp(c, lo.clone(), hi.clone());
    if m > 0 {
        let feas = DVector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random_range(0.2..0.8));
        let a = gaussian_mat(rng, m, n);
        let b = -(&a * &feas);
        p = p.with_equalities(a, b);
    }
    p
}

/// Strongly convex QP (`H >= floor I`) with an interior optimum on a wide box.
pub fn random_interior_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, floor: f64) -> ProblemParameters {
    let h = random_spd(rng, n, floor);
    let c = gaussian_vec(rng, n);
    let mut p = ProblemParameters::box_lp(
        c,
        DVector::from_element(n, -50.0),
        DVector::from_element(n, 50.0),
    )
    .with_quadratic(h);
    if m > 0 {
        let a = gaussian_mat(rng, m, n);
        let b = gaussian_vec(rng, m);
        p = p.with_equalities(a, b);
    }
    p
}
