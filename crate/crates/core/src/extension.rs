//! Exact box-constrained least squares on a few columns by sweeping all
//! `3^k` active-set guesses, and the extension of an integral part `z` by an
//! optimal fractional part on a guessed support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, MinNormSolver};
use crate::numeric::neumaier_sum;
use crate::problem::{ProblemInstance, SparseSolution, ZERO_TOL};

/// Largest number of columns a sweep accepts.
pub const HARD_CAP: usize = 20;

/// Slack for free coordinates landing just outside their bounds (then clamped).
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Objectives closer than this are ties.
const TIE_TOL: f64 = 1e-12;

/// Free-block pseudo-inverses are cached up to this many columns.
const CACHE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    AtZero,
    Free,
    AtUpper,
}

/// Partition of the guessed support into coordinates clamped at zero,
/// clamped at the upper bound, and free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSetGuess {
    pub at_zero: Vec<usize>,
    pub at_upper: Vec<usize>,
    pub free: Vec<usize>,
}

impl ActiveSetGuess {
    fn from_code(code: usize, k: usize) -> Vec<Activity> {
        let mut out = vec![Activity::AtZero; k];
        let mut c = code;
        for slot in out.iter_mut().rev() {
            *slot = match c % 3 {
                0 => Activity::AtZero,
                1 => Activity::Free,
                _ => Activity::AtUpper,
            };
            c /= 3;
        }
        out
    }

    fn from_activities(acts: &[Activity]) -> Self {
        let pick = |want| {
            acts.iter()
                .enumerate()
                .filter(|(_, a)| **a == want)
                .map(|(i, _)| i)
                .collect()
        };
        Self {
            at_zero: pick(Activity::AtZero),
            at_upper: pick(Activity::AtUpper),
            free: pick(Activity::Free),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLsSolution {
    pub g: Vec<f64>,
    /// `||rhs - A g||_2`.
    pub objective: f64,
    pub guess: ActiveSetGuess,
}

/// `min ||rhs - A g||_2` over `0 <= g <= bounds` for a fixed small matrix,
/// reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct BoxLeastSquares {
    mat: Matrix,
    bounds: Vec<f64>,
    /// Minimum-norm solvers indexed by free-coordinate bitmask.
    cache: Option<Vec<MinNormSolver>>,
}

impl BoxLeastSquares {
    /// `columns[j]` is column `j` (length `m`).
    pub fn new(rows: usize, columns: &[Vec<f64>], bounds: &[f64]) -> Result<Self> {
        let k = columns.len();
        if k > HARD_CAP {
            return Err(Error::SupportTooLarge(k));
        }
        if bounds.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: bounds.len(),
            });
        }
        let mat = Matrix::from_columns(rows, columns);
        let cache = (k <= CACHE_LIMIT).then(|| {
            (0..1usize << k)
                .map(|mask| MinNormSolver::new(&free_block(&mat, mask)))
                .collect()
        });
        Ok(Self {
            mat,
            bounds: bounds.to_vec(),
            cache,
        })
    }

    pub fn from_int_columns(rows: usize, columns: &[Vec<i64>], bounds: &[f64]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect();
        Self::new(rows, &cols, bounds)
    }

    pub fn k(&self) -> usize {
        self.bounds.len()
    }

    /// Largest `||A g||_2` over the box, bounded by `sum_j bounds_j ||A_j||_2`.
    pub fn reach(&self) -> f64 {
        (0..self.k())
            .map(|j| {
                self.bounds[j] * self.mat.column(j).iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .sum()
    }

    fn residual_norm(&self, rhs: &[f64], g: &[f64]) -> f64 {
        let ag = self.mat.mul_vec(g);
        neumaier_sum(rhs.iter().zip(&ag).map(|(r, a)| (r - a) * (r - a))).sqrt()
    }

    /// Objective and point of one active-set guess, or `None` when the free
    /// coordinates leave their bounds.
    fn try_guess(&self, code: usize, rhs: &[f64]) -> Option<(f64, Vec<f64>)> {
        let k = self.k();
        let acts = ActiveSetGuess::from_code(code, k);
        let mut g = vec![0.0; k];
        let mut mask = 0usize;
        let mut shifted = rhs.to_vec();
        for (j, a) in acts.iter().enumerate() {
            match a {
                Activity::AtZero => {}
                Activity::Free => mask |= 1 << j,
                Activity::AtUpper => {
                    g[j] = self.bounds[j];
                    for (s, c) in shifted.iter_mut().zip(self.mat.column(j)) {
                        *s -= c * self.bounds[j];
                    }
                }
            }
        }
        if mask != 0 {
            let sol = match &self.cache {
                Some(c) => c[mask].solve(&shifted),
                None => MinNormSolver::new(&free_block(&self.mat, mask)).solve(&shifted),
            };
            for (pos, j) in (0..k).filter(|j| mask >> j & 1 == 1).enumerate() {
                let v = sol[pos];
                if v < -FEASIBILITY_TOL || v > self.bounds[j] + FEASIBILITY_TOL {
                    return None;
                }
                g[j] = v.clamp(0.0, self.bounds[j]);
            }
        }
        Some((self.residual_norm(rhs, &g), g))
    }

    fn solution(&self, objective: f64, g: Vec<f64>, code: usize) -> BoxLsSolution {
        BoxLsSolution {
            g,
            objective,
            guess: ActiveSetGuess::from_activities(&ActiveSetGuess::from_code(code, self.k())),
        }
    }

    /// Exact minimizer over the box. An unconstrained minimizer inside the
    /// box is returned at once; otherwise every guess is swept in
    /// lexicographic order (per coordinate: zero, free, upper) and the best
    /// feasible one wins, ties within `1e-12` keeping the earliest guess.
    pub fn solve(&self, rhs: &[f64]) -> BoxLsSolution {
        let k = self.k();
        let all_free = (0..k).fold(0, |acc, _| acc * 3 + 1);
        if k > 0 {
            if let Some((obj, g)) = self.try_guess(all_free, rhs) {
                return self.solution(obj, g, all_free);
            }
        }
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for code in 0..3usize.pow(k as u32) {
            if code == all_free && k > 0 {
                continue;
            }
            let Some((obj, g)) = self.try_guess(code, rhs) else {
                continue;
            };
            if best.as_ref().is_none_or(|(b, _, _)| obj < b - TIE_TOL) {
                best = Some((obj, g, code));
            }
        }
        // the all-zero guess is always feasible
        let (objective, g, code) = best.expect("all-zero guess is feasible");
        self.solution(objective, g, code)
    }
}

fn free_block(mat: &Matrix, mask: usize) -> Matrix {
    let cols: Vec<Vec<f64>> = (0..mat.cols())
        .filter(|j| mask >> j & 1 == 1)
        .map(|j| mat.column(j).to_vec())
        .collect();
    Matrix::from_columns(mat.rows(), &cols)
}

/// Exact minimizer of `||rhs - A_sub g||_2` over `0 <= g <= bounds`.
/// `a_sub` is given by columns.
pub fn box_least_squares(a_sub: &[Vec<i64>], rhs: &[f64], bounds: &[f64]) -> Result<Vec<f64>> {
    if let Some(c) = a_sub.iter().find(|c| c.len() != rhs.len()) {
        return Err(Error::DimensionMismatch {
            expected: rhs.len(),
            found: c.len(),
        });
    }
    Ok(BoxLeastSquares::from_int_columns(rhs.len(), a_sub, bounds)?
        .solve(rhs)
        .g)
}

/// `x = z + f` minimizing `||b - A z - A f||_2` over `supp(f) ⊆ support`
/// and `0 <= f <= u`.
pub fn extend(instance: &ProblemInstance, z: &[i64], support: &[usize]) -> Result<SparseSolution> {
    let n = instance.n();
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    if support.len() > HARD_CAP {
        return Err(Error::SupportTooLarge(support.len()));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range")));
    }
    if let Some(j) = (0..n).find(|&j| z[j] < 0 || z[j] > instance.upper(j)) {
        return Err(Error::Infeasible(format!("z[{j}] = {} outside its bounds", z[j])));
    }
    if let Some(&j) = support.iter().find(|&&j| z[j] != 0) {
        return Err(Error::Infeasible(format!("z[{j}] is nonzero inside the fractional support")));
    }
    let nnz = z.iter().filter(|&&v| v != 0).count();
    if nnz + support.len() > instance.sigma_eff() {
        return Err(Error::Infeasible(format!(
            "z has {nnz} nonzeros, with {} free coordinates this exceeds sigma = {}",
            support.len(),
            instance.sigma()
        )));
    }

    let zf: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let rhs = instance.residual(&zf)?;
    let cols: Vec<Vec<i64>> = support.iter().map(|&j| instance.column(j)).collect();
    let bounds: Vec<f64> = support.iter().map(|&j| instance.upper(j) as f64).collect();
    let g = BoxLeastSquares::from_int_columns(instance.m(), &cols, &bounds)?
        .solve(&rhs)
        .g;
    let mut x = zf;
    for (&j, v) in support.iter().zip(g) {
        x[j] = if v.abs() <= ZERO_TOL { 0.0 } else { v };
    }
    SparseSolution::from_dense(instance, x)
}
