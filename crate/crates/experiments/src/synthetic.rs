//! Synthetic cost-learning task used by the hyperparameter sweep.
//!
//! A hidden affine map `c = W* phi` produces the cost of a selection LP over
//! `[0, 1]^n` ("pick half of the items", plus `m - 1` random equalities
//! through the centre of the box). The learner sees the features `phi` and
//! the optimal selections, and fits its own affine backbone.

use lpgd::pipeline::{CostModel, LearnableParams, Sample};
use lpgd::{solve, ParamMask, ProblemParameters, Result, SolverSettings};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SweepExperiment;

/// Accuracy used to label the data.
const LABEL_TOL: f64 = 1e-9;
const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub layer: LearnableParams,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn selection_task(spec: &SweepExperiment, seed: u64) -> Result<SyntheticTask> {
    let (n, m, k) = (spec.n, spec.m, spec.features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut a = DMatrix::from_fn(m, n, |_, _| normal());
    if m > 0 {
        a.row_mut(0).fill(1.0);
    }
    let mut base = ProblemParameters::unit_box_lp(DVector::zeros(n)).with_equalities(a, DVector::zeros(m));
    if spec.quadratic > 0.0 {
        base = base.with_quadratic(DMatrix::identity(n, n) * spec.quadratic);
    }
    let center = DVector::from_element(n, 0.5);
    base.b = -(&base.a * &center);

    let w_true = DMatrix::from_fn(n, k, |_, _| normal());
    let settings = SolverSettings::with_tol(LABEL_TOL);
    let mut sample = || -> Result<Sample> {
        let input = DVector::from_fn(k, |_, _| normal());
        let mut p = base.clone();
        p.c = &w_true * &input;
        let target = solve(&p, &settings, None)?.solution.x;
        Ok(Sample { input, target })
    };
    let train = (0..spec.train_size).map(|_| sample()).collect::<Result<Vec<_>>>()?;
    let test = (0..spec.test_size).map(|_| sample()).collect::<Result<Vec<_>>>()?;

    let w = DMatrix::from_fn(n, k, |_, _| INIT_SCALE * normal());
    let layer = LearnableParams::new(base, ParamMask::COST).with_cost(CostModel::Affine {
        w,
        u: DVector::zeros(n),
    });
    Ok(SyntheticTask { layer, train, test })
}
