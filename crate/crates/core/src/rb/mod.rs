//! Reduced-basis acceleration: offline construction of a certified state
//! space (weak greedy over the affine right-hand sides and the measurement
//! adjoints), greedy selection of observation functionals, and an online
//! solver whose error in state, correction, misfit and adjoint is bounded
//! rigorously from residual norms alone.

pub mod greedy;
pub mod omp;
pub mod online;
pub mod spaces;

pub use greedy::{
    adjoint_rhs_family, build_adjoint_space, build_state_space, max_estimator_on, merge_bases,
    state_rhs_family, GreedyReport, GreedyStep,
};
pub use omp::{select_functionals, FunctionalLibrary, OmpConfig, OmpOutcome, OmpStep};
pub use online::{error_bounds, residual_norms, solve_rb, ErrorBounds, RbSolution, ResidualNorms};
pub use spaces::{RbSpaces, ResidualData, SnapshotTag};
