use thiserror::Error;

use crate::problem::Violation;
use crate::relaxation::RelaxedSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch: expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The relaxation did not certify the requested gap. The best iterate is
    /// kept for diagnostics.
    #[error("iteration budget exhausted: certified gap {} above target {target}", .best.certified_gap)]
    NotCertified {
        best: Box<RelaxedSolution>,
        target: f64,
    },

    #[error("enumeration cap exceeded: {points} points requested, cap is {cap}")]
    EnumerationCap { points: f64, cap: u64 },

    #[error("oracle cap exceeded: {work} least-squares solves requested, cap is {cap}")]
    OracleCap { work: f64, cap: u64 },

    #[error("{found} fractional entries, at most {allowed} allowed")]
    TooManyFractional { found: usize, allowed: usize },

    #[error("fractional support of size {0} exceeds the hard cap of 20")]
    SupportTooLarge(usize),

    #[error("rejection budget of {0} proposals exhausted; raise the budget or lambda")]
    RejectionBudget(u64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
