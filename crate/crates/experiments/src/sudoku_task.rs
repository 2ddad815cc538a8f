//! The constraint-learning layer for mini-Sudoku.
//!
//! The layer solves `min <x, -x_inc>` over `[0, 1]^64` subject to learned
//! equality constraints `A x + b = 0`. `b` stays tied to `A` through the
//! uniform board `x = 1/4`, which satisfies every Sudoku rule, so the true
//! rules are representable and the feasible set is never empty.

use lpgd::pipeline::{CostModel, LearnableParams};
use lpgd::sudoku::NUM_VARS;
use lpgd::{ParamMask, ProblemParameters};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random initial layer with `m` constraints, entries `N(0, init_scale^2)`.
pub fn initial_layer(m: usize, init_scale: f64, seed: u64) -> LearnableParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, NUM_VARS, |_, _| {
        init_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let params = ProblemParameters::unit_box_lp(DVector::zeros(NUM_VARS))
        .with_equalities(a, DVector::zeros(m));
    LearnableParams::new(params, ParamMask { a: true, ..ParamMask::CONSTRAINTS })
        .with_cost(CostModel::InputOffset { scale: -1.0 })
        .with_anchor(DVector::from_element(NUM_VARS, 0.25))
}
