//! Exact sparse approximation over boxes: minimize `||A x - b||_2` subject
//! to `0 <= x <= u` and at most `sigma` nonzero entries, for integer `A`.
//!
//! The pipeline solves the convex relaxation with a certified gap, limits
//! the integral part of an optimum to a box around `A x_bar`, enumerates
//! it with a dynamic program, and finishes each candidate with exact box
//! least squares. [`solver::solve_oracle`] is a brute-force reference.

pub mod error;
pub mod exact;
pub mod experiments;
pub mod extension;
pub mod feasibility;
pub mod io;
pub mod linalg;
pub mod numeric;
pub mod problem;
pub mod proximity;
pub mod relaxation;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use problem::{ProblemInstance, RawInstance, SparseSolution};
pub use relaxation::RelaxedSolution;
pub use solver::{solve_exact, solve_oracle, SolveReport, SolverConfig};
