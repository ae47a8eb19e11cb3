//! Smooth constrained nonlinear programming.
//!
//! [`NlpProblem`] describes a problem through value and derivative oracles;
//! [`solve`] runs the primal-dual interior-point method in [`ipm`]. Other
//! engines can be plugged in behind [`NlpSolver`].

pub mod ipm;
pub mod ldl;
pub mod problem;
pub mod sparse;

use thiserror::Error;

pub use ipm::{restore_feasible_start, solve, MeritStep, Solution, SolveReport, SolveStatus, SolverOptions};
pub use problem::NlpProblem;
pub use sparse::Triplets;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("variable {index} has an empty box [{lower}, {upper}]")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },
    #[error("objective or constraints are not finite at the starting point")]
    NonFiniteStart,
}

/// Solve contract shared by interchangeable NLP engines.
pub trait NlpSolver {
    fn solve(&self, problem: &dyn NlpProblem, opts: &SolverOptions) -> Result<Solution, NlpError>;
}

/// The built-in interior-point engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl NlpSolver for InteriorPoint {
    fn solve(&self, problem: &dyn NlpProblem, opts: &SolverOptions) -> Result<Solution, NlpError> {
        ipm::solve(problem, opts)
    }
}
