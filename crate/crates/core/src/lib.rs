//! Support-budgeted sparse minimization on discretized domains.
//!
//! The library minimizes `f(u) + (alpha/2)||u||^2` over grid functions whose
//! support measure is bounded by a budget `tau`, where the budget is measured
//! with the cell weights of a [`grid::Grid`].
//!
//! Modules:
//!
//! - [`grid`] — weighted grids, grid functions, indicators, weighted norms.
//! - [`separable`] — exact solver for budget-constrained pointwise-separable
//!   integral problems, plus a brute-force oracle and penalized-form checks.
//! - [`objective`] — the [`objective::SmoothObjective`] contract and a
//!   quadratic instance of it.
//! - [`poisson`] — tracking objective constrained by a Poisson equation, with
//!   adjoint gradients and a certified gradient Lipschitz bound.
//! - [`prox`] — the proximal gradient loop with closed-form support-budgeted
//!   prox steps and per-iteration diagnostics.
//! - [`optimality`] — residual checkers for the necessary optimality
//!   conditions at a candidate control.
//!
//! The `parallel` feature (default) parallelizes per-cell work with rayon.
//! Results are bitwise identical with and without it: all reductions use a
//! fixed-topology pairwise summation tree (see [`exec`]).

pub mod exec;
pub mod grid;
pub mod linalg;
pub mod objective;
pub mod optimality;
pub mod poisson;
pub mod prox;
pub mod separable;

pub use grid::{Grid, GridFunction, Indicator};
pub use objective::{LinearMap, QuadraticObjective, SmoothObjective};
pub use optimality::{check_noc, check_pmp_pointwise, OptimalityReport};
pub use poisson::PoissonTracking;
pub use prox::{prox_step, run, Backtracking, ProxGradConfig, Trajectory};
pub use separable::{
    brute_force_l0, check_penalized_equivalence, compute_tilde_v, select_support, solve_l0,
    L0Solution, QuadraticIntegrand, SeparableIntegrand,
};

/// Errors reported by the library.
#[derive(Debug)]
pub enum Error {
    /// Two arguments refer to different grids.
    GridMismatch,
    /// The support budget must lie strictly between 0 and the total measure.
    InvalidTau { tau: f64, total_measure: f64 },
    /// A prox or solver parameter is out of range.
    InvalidParameter(String),
    /// The integrand is not finite where it must be (at `u = 0`, or at its
    /// pointwise minimizer).
    InvalidIntegrand { cell: usize },
    /// Brute-force enumeration is guarded to small instances.
    TooManyCells { cells: usize, limit: usize },
    /// The conjugate gradient solve did not reach its tolerance.
    CgDidNotConverge { iterations: usize, residual: f64 },
    /// The step-size search exhausted its growth budget.
    BacktrackingExhausted { tries: usize },
    /// A grid could not be used for the requested construction.
    InvalidGrid(String),
    /// File input/output failed.
    Io(std::io::Error),
    /// A file had an unexpected format.
    Parse(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::GridMismatch => write!(f, "arguments refer to different grids"),
            Error::InvalidTau { tau, total_measure } => write!(
                f,
                "support budget tau = {tau} must lie in (0, {total_measure})"
            ),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InvalidIntegrand { cell } => {
                write!(f, "integrand is not finite at cell {cell}")
            }
            Error::TooManyCells { cells, limit } => write!(
                f,
                "brute-force enumeration refused: {cells} cells exceeds the limit of {limit}"
            ),
            Error::CgDidNotConverge {
                iterations,
                residual,
            } => write!(
                f,
                "conjugate gradients did not converge in {iterations} iterations \
                 (residual {residual:e})"
            ),
            Error::BacktrackingExhausted { tries } => {
                write!(f, "backtracking failed after {tries} step-size increases")
            }
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
