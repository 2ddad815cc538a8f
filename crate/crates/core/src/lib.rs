//! Lagrangian proximal gradient descent (LPGD) for training models with
//! embedded optimization layers.
//!
//! The forward layer solves a box-constrained saddle-point problem; the
//! backward pass replaces the (often degenerate) derivative of the solution
//! map by a finite difference of Lagrangian parameter-gradients at the
//! forward solution and at the solution of a perturbed problem.

pub mod envelope;
pub mod error;
pub mod exact;
pub mod format;
pub mod implicit;
pub mod pipeline;
pub mod problem;
pub mod solver;
pub mod sudoku;
pub mod update;

pub use envelope::{EnvelopeConfig, LossSpec, Variant};
pub use error::{Error, Result};
pub use exact::solve_exact_lp;
pub use implicit::{implicit_gradient_qp, ImplicitOptions};
pub use pipeline::{train, LearnableParams, Method, TrainConfig, TrainTrace};
pub use problem::{PrimalDualSolution, ProblemParameters};
pub use solver::{solve, SolverReport, SolverSettings};
pub use update::{lpgd_update, BackwardOptions, ParamMask, UpdateForm, UpdateVector};
