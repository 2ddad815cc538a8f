use thiserror::Error;

use crate::solver::SolverReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The iteration budget ran out before the residuals met the tolerance.
    /// The best iterate found is attached.
    #[error(
        "solver hit the iteration limit (primal residual {:.3e}, dual residual {:.3e})",
        .0.primal_residual,
        .0.dual_residual
    )]
    MaxIterationsExceeded(Box<SolverReport>),

    #[error("problem is infeasible: {0}")]
    InfeasibleProblem(String),

    #[error("problem too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    /// The point violates the equality constraints, so the supremum over the
    /// duals is unbounded.
    #[error("Lagrangian divergence is infinite (equality violation {violation:.3e})")]
    InfiniteDivergence { violation: f64 },

    #[error("loss is not representable in the solver class: {0}")]
    UnsupportedLoss(String),

    #[error("problem has no dual variables")]
    NoDuals,

    #[error("KKT system is singular (condition number {condition:.3e}); try rho > 0")]
    SingularSystem { condition: f64 },

    #[error("strict complementarity violated at coordinate {index} (multiplier {multiplier:.3e})")]
    StrictComplementarityViolated { index: usize, multiplier: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}
