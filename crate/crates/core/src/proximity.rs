//! Proximity radii between relaxed and sparse optima, the integral box of
//! candidate right-hand sides, and the rounding of a relaxed point with few
//! fractional entries to a sparse-feasible point.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::problem::{ProblemInstance, SparseSolution};

pub const DEFAULT_ENUM_CAP: u64 = 100_000_000;

/// Slack added to the radius before taking floors and ceilings, so that a
/// valid candidate is never lost to rounding in the center.
pub const RADIUS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityBound {
    /// `2 m^{3/2} ||A||_inf`: distance of sparse optima from an exact relaxed optimum.
    pub radius_exact: f64,
    /// `3 m^{3/2} ||A||_inf + epsilon`: distance of the integral part of a
    /// sparse optimum from an epsilon-close relaxed point.
    pub radius_eps: f64,
    /// `||u||_inf`, 1 in the base case.
    pub u_factor: f64,
    pub epsilon: f64,
}

impl ProximityBound {
    /// Per-coordinate radius of the candidate box.
    pub fn box_radius(&self) -> f64 {
        self.radius_eps * self.u_factor
    }

    /// Bound on `||A x* - A x_bar||_inf` for an epsilon-close `x_bar`.
    pub fn realized_radius(&self) -> f64 {
        self.radius_exact * self.u_factor + self.epsilon
    }
}

pub fn compute_bounds(instance: &ProblemInstance, epsilon: f64) -> ProximityBound {
    let m32 = (instance.m() as f64).powf(1.5);
    let a_max = instance.a_max().as_f64();
    ProximityBound {
        radius_exact: 2.0 * m32 * a_max,
        radius_eps: 3.0 * m32 * a_max + epsilon.max(0.0),
        u_factor: instance.u_max() as f64,
        epsilon: epsilon.max(0.0),
    }
}

/// `2 ||x - floor(x)||_1 max_i ||A_i||_2` for a point with few fractional
/// entries. Reported for diagnostics; the search always uses the constant
/// radii above.
pub fn column_norm_radius(instance: &ProblemInstance, x: &[f64]) -> f64 {
    let frac: f64 = x.iter().map(|v| v - v.floor()).sum();
    let col = (0..instance.n())
        .map(|j| instance.column_norm(j))
        .fold(0.0, f64::max);
    2.0 * frac * col
}

/// Integral right-hand side candidate `b*`.
pub type CandidateRhs = Vec<i64>;

/// Closed axis-aligned integer box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateBox {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl CandidateBox {
    /// Integers within `radius` (plus [`RADIUS_SLACK`]) of `center` per coordinate.
    pub fn around(center: &[f64], radius: f64) -> Self {
        let r = radius.max(0.0) + RADIUS_SLACK;
        Self {
            lower: center.iter().map(|c| (c - r).ceil() as i64).collect(),
            upper: center.iter().map(|c| (c + r).floor() as i64).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Number of points; a float because it may be astronomically large.
    pub fn count(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo + 1).max(0) as f64)
            .product()
    }

    pub fn contains(&self, v: &[i64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(lo, hi)| lo > hi)
    }

    /// Splits the first coordinate range into at most `parts` sub-boxes that
    /// together enumerate the same points in the same order.
    pub fn split(&self, parts: usize) -> Vec<CandidateBox> {
        if self.dim() == 0 || self.is_empty() || parts <= 1 {
            return vec![self.clone()];
        }
        let (lo, hi) = (self.lower[0], self.upper[0]);
        let len = (hi - lo + 1) as usize;
        let parts = parts.min(len);
        let mut out = Vec::with_capacity(parts);
        let mut start = lo;
        for p in 0..parts {
            let size = (len / parts + usize::from(p < len % parts)) as i64;
            let mut b = self.clone();
            b.lower[0] = start;
            b.upper[0] = start + size - 1;
            start += size;
            out.push(b);
        }
        out
    }

    /// Lexicographic iteration over all points.
    pub fn iter(&self) -> BoxIter {
        BoxIter {
            current: if self.is_empty() {
                None
            } else {
                Some(self.lower.clone())
            },
            bx: self.clone(),
        }
    }
}

pub struct BoxIter {
    bx: CandidateBox,
    current: Option<Vec<i64>>,
}

impl Iterator for BoxIter {
    type Item = CandidateRhs;

    fn next(&mut self) -> Option<CandidateRhs> {
        let cur = self.current.take()?;
        let mut next = cur.clone();
        let mut advanced = false;
        for i in (0..next.len()).rev() {
            if next[i] < self.bx.upper[i] {
                next[i] += 1;
                advanced = true;
                break;
            }
            next[i] = self.bx.lower[i];
        }
        if advanced {
            self.current = Some(next);
        }
        Some(cur)
    }
}

/// All integer points of the box of radius `radius` around `center`, or an
/// error when there are more than `cap` of them.
pub fn enumerate_box(center: &[f64], radius: f64, cap: u64) -> Result<BoxIter> {
    let bx = CandidateBox::around(center, radius);
    let points = bx.count();
    if points > cap as f64 {
        return Err(Error::EnumerationCap { points, cap });
    }
    Ok(bx.iter())
}

/// Rational version of [`round_fractional_part`].
///
/// With `F` the fractional indices in increasing order and
/// `k = sum_{i in F} x_i / u_i`, the first `floor(k)` indices of `F` go to
/// their upper bound, the next one takes `(k - floor(k)) u_i`, and the rest
/// go to zero. The weighted sum over `F` is preserved exactly.
pub fn round_fractional_part_exact(
    instance: &ProblemInstance,
    x: &[Rational],
) -> Result<Vec<Rational>> {
    if x.len() != instance.n() {
        return Err(Error::DimensionMismatch {
            expected: instance.n(),
            found: x.len(),
        });
    }
    let frac: Vec<usize> = (0..x.len())
        .filter(|&j| x[j] > Rational::zero() && x[j] < exact::from_int(instance.upper(j)))
        .collect();
    if frac.len() > instance.m() {
        return Err(Error::TooManyFractional {
            found: frac.len(),
            allowed: instance.m(),
        });
    }
    let k = frac.iter().fold(Rational::zero(), |acc, &j| {
        acc + &x[j] / exact::from_int(instance.upper(j))
    });
    let whole = k.floor();
    let rest = &k - &whole;
    let whole = exact::to_f64(&whole) as usize;
    let mut y = x.to_vec();
    for (pos, &j) in frac.iter().enumerate() {
        let ub = exact::from_int(instance.upper(j));
        y[j] = match pos.cmp(&whole) {
            std::cmp::Ordering::Less => ub,
            std::cmp::Ordering::Equal => &rest * ub,
            std::cmp::Ordering::Greater => Rational::zero(),
        };
    }
    Ok(y)
}

/// Builds a sparse-feasible point from a relaxed point with at most `m`
/// fractional entries, keeping its integral entries.
pub fn round_fractional_part(instance: &ProblemInstance, x_hat: &[f64]) -> Result<SparseSolution> {
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x_hat"));
    }
    let xr: Vec<Rational> = x_hat.iter().map(|&v| exact::to_rational(v)).collect();
    let y = round_fractional_part_exact(instance, &xr)?;
    SparseSolution::from_dense(instance, y.iter().map(exact::to_f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_formulas() {
        let i = ProblemInstance::new(vec![vec![1, 0], vec![0, 1]], vec![0.0; 2], 1).unwrap();
        let b = compute_bounds(&i, 2f64.sqrt());
        assert!((b.radius_eps - 9.899494936611665).abs() < 1e-12);
        assert_eq!(b.u_factor, 1.0);
        let i = ProblemInstance::new(vec![vec![1, -1]], vec![0.0], 1).unwrap();
        let b = compute_bounds(&i, 0.0);
        assert_eq!((b.radius_exact, b.radius_eps), (2.0, 3.0));
        let iu = i.with_upper_bounds(vec![3, 2]).unwrap();
        assert_eq!(compute_bounds(&iu, 0.0).u_factor, 3.0);
        assert_eq!(compute_bounds(&iu, 0.0).box_radius(), 9.0);
    }

    #[test]
    fn box_examples() {
        let pts: Vec<_> = enumerate_box(&[0.3], 1.0, DEFAULT_ENUM_CAP).unwrap().collect();
        assert_eq!(pts, vec![vec![0], vec![1]]);
        let pts: Vec<_> = enumerate_box(&[4.0], 0.0, DEFAULT_ENUM_CAP).unwrap().collect();
        assert_eq!(pts, vec![vec![4]]);
        let pts: Vec<_> = enumerate_box(&[0.0, 0.0], 1.0, DEFAULT_ENUM_CAP)
            .unwrap()
            .collect();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![-1, -1]);
        assert_eq!(pts[1], vec![-1, 0]);
        assert_eq!(pts[8], vec![1, 1]);
    }

    #[test]
    fn box_cap_refuses() {
        let err = enumerate_box(&[0.0; 3], 10.0, 1000).err().unwrap();
        assert!(matches!(err, Error::EnumerationCap { cap: 1000, .. }));
    }

    #[test]
    fn split_preserves_order() {
        let bx = CandidateBox::around(&[0.0, 0.5], 2.0);
        let whole: Vec<_> = bx.iter().collect();
        let parts: Vec<_> = bx.split(4).iter().flat_map(|b| b.iter()).collect();
        assert_eq!(whole, parts);
        assert_eq!(whole.len() as f64, bx.count());
    }

    #[test]
    fn rounding_examples() {
        let i = ProblemInstance::new(vec![vec![1, 2, 3, 4]], vec![0.0], 3).unwrap();
        let y = round_fractional_part(&i, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(y.x, vec![1.0, 0.0, 1.0, 0.0]);

        let i = ProblemInstance::new(vec![vec![1, 2, 3, 4], vec![0, 1, 1, 0]], vec![0.0; 2], 2)
            .unwrap();
        let y = round_fractional_part(&i, &[0.5, 0.5, 1.0, 0.0]).unwrap();
        assert_eq!(y.x, vec![1.0, 0.0, 1.0, 0.0]);

        let i = ProblemInstance::new(vec![vec![1, 2, 3], vec![0, 1, 1]], vec![0.0; 2], 2).unwrap();
        let y = round_fractional_part(&i, &[0.7, 0.9, 0.0]).unwrap();
        assert_eq!(y.x[0], 1.0);
        assert!((y.x[1] - 0.6).abs() < 1e-15);
        assert_eq!(y.x[2], 0.0);
    }

    #[test]
    fn rounding_rejects_many_fractionals() {
        let i = ProblemInstance::new(vec![vec![1, 2, 3]], vec![0.0], 3).unwrap();
        assert!(matches!(
            round_fractional_part(&i, &[0.5, 0.5, 0.0]),
            Err(Error::TooManyFractional { found: 2, allowed: 1 })
        ));
    }

    #[test]
    fn rounding_with_bounds_keeps_weighted_sum() {
        let i = ProblemInstance::new(vec![vec![1, 1], vec![1, -1]], vec![0.0; 2], 2)
            .unwrap()
            .with_upper_bounds(vec![2, 4])
            .unwrap();
        // k = 1.5/2 + 1/4 = 1 -> first to its bound, second to zero
        let y = round_fractional_part(&i, &[1.5, 1.0]).unwrap();
        assert_eq!(y.x, vec![2.0, 0.0]);
    }
}
