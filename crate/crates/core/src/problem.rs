//! Problem instances, validation and objective evaluation.
//!
//! An instance asks for `min ||Ax - b||_2` over `0 <= x <= u` with at most
//! `sigma` nonzero entries. `A` is an integer matrix; `u` defaults to the
//! all-ones vector.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot_i64, neumaier_sum};

/// Entries with `|x_i| <= ZERO_TOL` are treated as exact zeros.
pub const ZERO_TOL: f64 = 1e-9;

/// Absolute entries of `A` (and `u`) above this are rejected so that the
/// integer dynamic programs never overflow.
pub const MAX_ENTRY: f64 = (1u64 << 31) as f64;

/// Instance as it appears on disk. Validation turns it into a
/// [`ProblemInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInstance {
    pub m: i64,
    pub n: i64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub sigma: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveDimension { name: &'static str, value: i64 },
    RowCount { declared: i64, found: usize },
    RowLength { row: usize, declared: i64, found: usize },
    TargetLength { declared: i64, found: usize },
    NonIntegral { row: usize, col: usize, value: f64 },
    EntryTooLarge { row: usize, col: usize, value: f64 },
    NonFiniteTarget { index: usize },
    NonPositiveSigma(i64),
    BoundLength { declared: i64, found: usize },
    NonPositiveBound { index: usize, value: f64 },
    NonIntegralBound { index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NonPositiveDimension { name, value } => write!(f, "{name} must be ≥ 1 (got {value})"),
            RowCount { declared, found } => {
                write!(f, "A has {found} rows but m = {declared}")
            }
            RowLength {
                row,
                declared,
                found,
            } => write!(f, "row {row} of A has {found} entries but n = {declared}"),
            TargetLength { declared, found } => {
                write!(f, "b has {found} entries but m = {declared}")
            }
            NonIntegral { row, col, value } => {
                write!(f, "A must be integral (A[{row}][{col}] = {value})")
            }
            EntryTooLarge { row, col, value } => {
                write!(f, "A[{row}][{col}] = {value} exceeds 2^31 in magnitude")
            }
            NonFiniteTarget { index } => write!(f, "b[{index}] is not finite"),
            NonPositiveSigma(s) => write!(f, "sigma must be ≥ 1 (got {s})"),
            BoundLength { declared, found } => {
                write!(f, "u has {found} entries but n = {declared}")
            }
            NonPositiveBound { index, value } => {
                write!(f, "u[{index}] must be ≥ 1 (got {value})")
            }
            NonIntegralBound { index, value } => {
                write!(f, "u must be integral (u[{index}] = {value})")
            }
        }
    }
}

/// Largest absolute entry of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InfNorm(pub i64);

impl InfNorm {
    pub fn value(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

/// A validated instance. Immutable after construction. Serializes through
/// [`RawInstance`], so deserializing validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct ProblemInstance {
    m: usize,
    n: usize,
    /// Row-major `m x n`.
    a: Vec<i64>,
    b: Vec<f64>,
    sigma: usize,
    u: Option<Vec<i64>>,
}

/// Checks every instance invariant and collects all violations.
pub fn validate(raw: &RawInstance) -> Result<ProblemInstance> {
    let mut violations = Vec::new();
    if raw.m < 1 {
        violations.push(Violation::NonPositiveDimension {
            name: "m",
            value: raw.m,
        });
    }
    if raw.n < 1 {
        violations.push(Violation::NonPositiveDimension {
            name: "n",
            value: raw.n,
        });
    }
    if raw.sigma < 1 {
        violations.push(Violation::NonPositiveSigma(raw.sigma));
    }
    if raw.a.len() as i64 != raw.m {
        violations.push(Violation::RowCount {
            declared: raw.m,
            found: raw.a.len(),
        });
    }
    if raw.b.len() as i64 != raw.m {
        violations.push(Violation::TargetLength {
            declared: raw.m,
            found: raw.b.len(),
        });
    }
    for (i, row) in raw.a.iter().enumerate() {
        if row.len() as i64 != raw.n {
            violations.push(Violation::RowLength {
                row: i,
                declared: raw.n,
                found: row.len(),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v.fract() != 0.0 {
                violations.push(Violation::NonIntegral {
                    row: i,
                    col: j,
                    value: v,
                });
            } else if v.abs() > MAX_ENTRY {
                violations.push(Violation::EntryTooLarge {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    for (i, v) in raw.b.iter().enumerate() {
        if !v.is_finite() {
            violations.push(Violation::NonFiniteTarget { index: i });
        }
    }
    if let Some(u) = &raw.u {
        if u.len() as i64 != raw.n {
            violations.push(Violation::BoundLength {
                declared: raw.n,
                found: u.len(),
            });
        }
        for (i, &v) in u.iter().enumerate() {
            if !v.is_finite() || v.fract() != 0.0 || v.abs() > MAX_ENTRY {
                violations.push(Violation::NonIntegralBound { index: i, value: v });
            } else if v < 1.0 {
                violations.push(Violation::NonPositiveBound { index: i, value: v });
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let m = raw.m as usize;
    let n = raw.n as usize;
    let a = raw.a.iter().flatten().map(|&v| v as i64).collect();
    let u = raw.u.as_ref().map(|u| u.iter().map(|&v| v as i64).collect());
    Ok(ProblemInstance {
        m,
        n,
        a,
        b: raw.b.clone(),
        sigma: raw.sigma as usize,
        u,
    })
}

impl TryFrom<RawInstance> for ProblemInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        validate(&raw)
    }
}

impl From<ProblemInstance> for RawInstance {
    fn from(inst: ProblemInstance) -> Self {
        inst.to_raw()
    }
}

impl ProblemInstance {
    /// Builds an instance from integer rows. Runs the same checks as [`validate`].
    pub fn new(rows: Vec<Vec<i64>>, b: Vec<f64>, sigma: usize) -> Result<Self> {
        let m = rows.len() as i64;
        let n = rows.first().map_or(0, |r| r.len()) as i64;
        validate(&RawInstance {
            m,
            n,
            a: rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v as f64).collect())
                .collect(),
            b,
            sigma: sigma as i64,
            u: None,
        })
    }

    /// Same instance with upper bounds `u` (generalized-bounds mode).
    pub fn with_upper_bounds(&self, u: Vec<i64>) -> Result<Self> {
        let mut raw = self.to_raw();
        raw.u = Some(u.into_iter().map(|v| v as f64).collect());
        validate(&raw)
    }

    /// Same matrix and bounds, new target.
    pub fn with_target(&self, b: Vec<f64>) -> Result<Self> {
        if b.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("b"));
        }
        Ok(Self { b, ..self.clone() })
    }

    pub fn with_sigma(&self, sigma: usize) -> Result<Self> {
        if sigma == 0 {
            return Err(Error::Validation(vec![Violation::NonPositiveSigma(0)]));
        }
        Ok(Self {
            sigma,
            ..self.clone()
        })
    }

    pub fn to_raw(&self) -> RawInstance {
        RawInstance {
            m: self.m as i64,
            n: self.n as i64,
            a: (0..self.m)
                .map(|i| self.row(i).iter().map(|&v| v as f64).collect())
                .collect(),
            b: self.b.clone(),
            sigma: self.sigma as i64,
            u: self
                .u
                .as_ref()
                .map(|u| u.iter().map(|&v| v as f64).collect()),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Sparsity budget as given.
    pub fn sigma(&self) -> usize {
        self.sigma
    }

    /// Sparsity budget clamped to `n`.
    pub fn sigma_eff(&self) -> usize {
        self.sigma.min(self.n)
    }

    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.a[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.m).map(|i| self.entry(i, j)).collect()
    }

    pub fn has_upper_bounds(&self) -> bool {
        self.u.is_some()
    }

    pub fn upper_bounds(&self) -> Option<&[i64]> {
        self.u.as_deref()
    }

    /// Upper bound of coordinate `j` (1 without explicit bounds).
    pub fn upper(&self, j: usize) -> i64 {
        self.u.as_ref().map_or(1, |u| u[j])
    }

    pub fn upper_f64(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.upper(j) as f64).collect()
    }

    /// `||u||_inf`, 1 in the base case.
    pub fn u_max(&self) -> i64 {
        self.u
            .as_ref()
            .map_or(1, |u| u.iter().copied().max().unwrap_or(1))
    }

    pub fn a_max(&self) -> InfNorm {
        InfNorm(self.a.iter().map(|v| v.abs()).max().unwrap_or(0))
    }

    /// Euclidean norm of column `j`.
    pub fn column_norm(&self, j: usize) -> f64 {
        (0..self.m)
            .map(|i| (self.entry(i, j) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `A x` with compensated summation.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok((0..self.m)
            .map(|i| neumaier_sum(self.row(i).iter().zip(x).map(|(&a, &v)| a as f64 * v)))
            .collect())
    }

    /// `A x` for integer `x`, exact.
    pub fn apply_int(&self, x: &[i64]) -> Result<Vec<i64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok((0..self.m).map(|i| dot_i64(self.row(i), x)).collect())
    }

    /// `b - A x`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok((0..self.m)
            .map(|i| {
                neumaier_sum(
                    self.row(i)
                        .iter()
                        .zip(x)
                        .map(|(&a, &v)| -(a as f64) * v)
                        .chain(std::iter::once(self.b[i])),
                )
            })
            .collect())
    }

    /// `||A x - b||_2^2`.
    pub fn objective_sq(&self, x: &[f64]) -> Result<f64> {
        let r = self.residual(x)?;
        Ok(neumaier_sum(r.iter().map(|v| v * v)))
    }

    /// `||A x - b||_2`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.objective_sq(x)?.sqrt())
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x"));
        }
        Ok(())
    }
}

/// Free function form of [`ProblemInstance::objective`].
pub fn objective(instance: &ProblemInstance, x: &[f64]) -> Result<f64> {
    instance.objective(x)
}

/// A feasible point of the sparse problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSolution {
    pub x: Vec<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
}

impl SparseSolution {
    /// Snaps dust to zero, clamps bound violations up to [`ZERO_TOL`], and
    /// checks the sparsity budget.
    pub fn from_dense(instance: &ProblemInstance, mut x: Vec<f64>) -> Result<Self> {
        if x.len() != instance.n() {
            return Err(Error::DimensionMismatch {
                expected: instance.n(),
                found: x.len(),
            });
        }
        for (j, v) in x.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("x"));
            }
            let ub = instance.upper(j) as f64;
            if *v < -ZERO_TOL || *v > ub + ZERO_TOL {
                return Err(Error::Infeasible(format!(
                    "x[{j}] = {v} outside [0, {ub}]"
                )));
            }
            *v = v.clamp(0.0, ub);
            if v.abs() <= ZERO_TOL {
                *v = 0.0;
            }
        }
        let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] != 0.0).collect();
        if support.len() > instance.sigma_eff() {
            return Err(Error::Infeasible(format!(
                "support size {} exceeds sigma = {}",
                support.len(),
                instance.sigma()
            )));
        }
        let objective = instance.objective(&x)?;
        Ok(Self {
            x,
            support,
            objective,
        })
    }

    pub fn zero(instance: &ProblemInstance) -> Self {
        Self::from_dense(instance, vec![0.0; instance.n()]).expect("zero is always feasible")
    }

    /// Re-checks all invariants against `instance`.
    pub fn verify(&self, instance: &ProblemInstance) -> Result<()> {
        let again = Self::from_dense(instance, self.x.clone())?;
        if again.support != self.support {
            return Err(Error::Infeasible("support does not match x".into()));
        }
        let rel = (again.objective - self.objective).abs() / again.objective.max(1.0);
        if rel > 1e-12 {
            return Err(Error::Infeasible(format!(
                "stored objective {} differs from recomputed {}",
                self.objective, again.objective
            )));
        }
        Ok(())
    }

    /// Deterministic preference order: objective, then support size, then
    /// support indices, then values. `Less` means `self` is preferred.
    pub fn preference(&self, other: &Self) -> Ordering {
        let scale = self.objective.abs().max(other.objective.abs()).max(1.0);
        if (self.objective - other.objective).abs() > 1e-12 * scale {
            return self.objective.total_cmp(&other.objective);
        }
        self.support
            .len()
            .cmp(&other.support.len())
            .then_with(|| self.support.cmp(&other.support))
            .then_with(|| {
                self.x
                    .iter()
                    .zip(&other.x)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }

    /// Keeps the preferred of `self` and `candidate`.
    pub fn keep_better(self, candidate: Self) -> Self {
        if candidate.preference(&self).is_lt() {
            candidate
        } else {
            self
        }
    }
}
