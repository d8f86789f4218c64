//! The convex relaxation `min ||Ax - b||` over
//! `P = {0 <= x <= u, sum_i x_i / u_i <= sigma}`.
//!
//! The solver is a fully-corrective Frank–Wolfe method (Wolfe's nearest-point
//! algorithm run in the image space `R^m`): it keeps at most a handful of
//! vertices of `P` whose images span a small simplex, and moves to the
//! nearest point of that simplex after each linear-minimization step. The
//! stopping rule and the returned certificate are the Frank–Wolfe gap
//! `g(x) = grad f(x)^T (x - s)`, which bounds `f(x) - f(x_hat)` from above
//! for `f = ||Ax - b||^2`.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, Rational};
use crate::linalg::{min_norm_lstsq, Matrix};
use crate::numeric::{dot, neumaier_sum};
use crate::problem::ProblemInstance;

pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

/// A feasible point of the relaxation with a certified suboptimality bound
/// on the squared objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub x_bar: Vec<f64>,
    pub certified_gap: f64,
    pub iterations: usize,
    /// `||b - A x_bar||_2`.
    pub objective: f64,
}

impl RelaxedSolution {
    /// Certified lower bound on the optimal relaxation objective `||b - A x_hat||_2`.
    pub fn lower_bound(&self) -> f64 {
        (self.objective * self.objective - self.certified_gap)
            .max(0.0)
            .sqrt()
    }
}

/// `sqrt(m) * ||A||_inf`, floored at `1e-6` so that it stays positive for `A = 0`.
pub fn default_epsilon(instance: &ProblemInstance) -> f64 {
    ((instance.m() as f64).sqrt() * instance.a_max().as_f64()).max(1e-6)
}

/// Indices set to their upper bound by the minimizing vertex: the `sigma`
/// coordinates with the most negative `u_i * gradient_i`, restricted to
/// negative gradient entries. Ties go to the lower index.
fn lmo_indices(gradient: &[f64], sigma: usize, u: &[f64]) -> Vec<usize> {
    let mut neg: Vec<usize> = (0..gradient.len()).filter(|&i| gradient[i] < 0.0).collect();
    neg.sort_by(|&a, &b| {
        (u[a] * gradient[a])
            .total_cmp(&(u[b] * gradient[b]))
            .then(a.cmp(&b))
    });
    neg.truncate(sigma);
    neg.sort_unstable();
    neg
}

/// Vertex of `P` minimizing `gradient^T s`.
pub fn linear_minimization(gradient: &[f64], sigma: usize, u: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; gradient.len()];
    for i in lmo_indices(gradient, sigma.min(gradient.len()), u) {
        s[i] = u[i];
    }
    s
}

/// Frank–Wolfe gap of `f(x) = ||Ax - b||^2` at a feasible `x`.
pub fn frank_wolfe_gap(instance: &ProblemInstance, x: &[f64]) -> Result<f64> {
    let residual = instance.residual(x)?; // b - Ax
    let grad = gradient_from_residual(instance, &residual);
    let u = instance.upper_f64();
    let s = linear_minimization(&grad, instance.sigma_eff(), &u);
    let diff: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a - b).collect();
    let ad = instance.apply(&diff)?;
    // grad^T (x - s) = -2 (b - Ax)^T A (x - s)
    Ok((-2.0 * dot(&residual, &ad)).max(0.0))
}

/// `grad f = -2 A^T (b - Ax)`; only the direction matters for the oracle, so
/// the factor is kept for the gap.
fn gradient_from_residual(instance: &ProblemInstance, residual: &[f64]) -> Vec<f64> {
    (0..instance.n())
        .map(|j| {
            -2.0 * neumaier_sum(
                (0..instance.m()).map(|i| instance.entry(i, j) as f64 * residual[i]),
            )
        })
        .collect()
}

struct Atom {
    indices: Vec<usize>,
    image: Vec<f64>,
}

fn atom(instance: &ProblemInstance, indices: Vec<usize>) -> Atom {
    let image = (0..instance.m())
        .map(|i| {
            neumaier_sum(
                indices
                    .iter()
                    .map(|&j| (instance.entry(i, j) * instance.upper(j)) as f64),
            )
        })
        .collect();
    Atom { indices, image }
}

/// Affine weights (summing to one) of the point of `aff(points)` nearest to `target`.
fn affine_nearest(points: &[&[f64]], target: &[f64]) -> Vec<f64> {
    let k = points.len();
    if k == 1 {
        return vec![1.0];
    }
    let m = target.len();
    let base = points[0];
    let mut d = Matrix::zeros(m, k - 1);
    for (j, p) in points[1..].iter().enumerate() {
        for i in 0..m {
            d.set(i, j, p[i] - base[i]);
        }
    }
    let rhs: Vec<f64> = target.iter().zip(base).map(|(t, b)| t - b).collect();
    let beta = min_norm_lstsq(&d, &rhs);
    let mut w = Vec::with_capacity(k);
    w.push(1.0 - beta.iter().sum::<f64>());
    w.extend(beta);
    w
}

fn combine(atoms: &[Atom], weights: &[f64], m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| neumaier_sum(atoms.iter().zip(weights).map(|(a, w)| a.image[i] * w)))
        .collect()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    neumaier_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
}

/// Solves the relaxation until the Frank–Wolfe gap is at most `epsilon^2`.
///
/// On failure to certify within `max_iters` (or when the floating-point
/// floor is reached first) returns [`Error::NotCertified`] carrying the best
/// iterate and its gap.
pub fn solve_relaxation(
    instance: &ProblemInstance,
    epsilon: f64,
    max_iters: usize,
) -> Result<RelaxedSolution> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let target = epsilon * epsilon;
    let m = instance.m();
    let n = instance.n();
    let sigma = instance.sigma_eff();
    let u = instance.upper_f64();
    let b = instance.b();

    let start = lmo_indices(
        &gradient_from_residual(instance, b),
        sigma,
        &u,
    );
    let mut atoms = vec![atom(instance, start)];
    let mut weights = vec![1.0];
    let mut point = atoms[0].image.clone();
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        // gradient in image space is 2 (point - b)
        let residual: Vec<f64> = b.iter().zip(&point).map(|(bi, pi)| bi - pi).collect();
        let grad = gradient_from_residual(instance, &residual);
        let s = lmo_indices(&grad, sigma, &u);
        let cand = atom(instance, s);
        let step: Vec<f64> = point.iter().zip(&cand.image).map(|(p, q)| p - q).collect();
        let gap = -2.0 * dot(&residual, &step);
        if gap <= target {
            break;
        }
        if atoms.iter().any(|a| a.indices == cand.indices) {
            // no new vertex improves: numerical floor
            break;
        }
        let before = dist_sq(&point, b);
        atoms.push(cand);
        weights.push(0.0);

        // minor cycles
        for _ in 0..=m + 2 {
            let pts: Vec<&[f64]> = atoms.iter().map(|a| a.image.as_slice()).collect();
            let alpha = affine_nearest(&pts, b);
            if alpha.iter().all(|&a| a > 0.0) {
                weights = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (l, a) in weights.iter().zip(&alpha) {
                if *a <= 0.0 && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in weights.iter_mut().zip(&alpha) {
                *l = (1.0 - theta) * *l + theta * a;
            }
            // drop atoms whose weight vanished; keep at least one
            let mut keep: Vec<bool> = weights.iter().map(|&l| l > 1e-15).collect();
            if !keep.iter().any(|&k| k) {
                let best = weights
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                keep[best] = true;
            }
            let mut i = 0;
            atoms.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
            let mut i = 0;
            weights.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w = (*w).max(0.0) / total);
        let next = combine(&atoms, &weights, m);
        if dist_sq(&next, b) > before {
            // the minor cycle lost accuracy; stop with the previous point
            break;
        }
        point = next;
    }

    let mut x = vec![0.0; n];
    for (a, w) in atoms.iter().zip(&weights) {
        for &j in &a.indices {
            x[j] += w * u[j];
        }
    }
    make_feasible(&mut x, &u, sigma);
    let mut certified_gap = frank_wolfe_gap(instance, &x)?;
    // iterates that sit a few ulps off a lattice point are snapped onto it
    // when that does not worsen the certificate
    let snapped: Vec<f64> = x
        .iter()
        .map(|&v| if (v - v.round()).abs() <= 1e-12 { v.round() } else { v })
        .collect();
    if snapped != x {
        let mut snapped = snapped;
        make_feasible(&mut snapped, &u, sigma);
        let g = frank_wolfe_gap(instance, &snapped)?;
        if g <= certified_gap && instance.objective_sq(&snapped)? <= instance.objective_sq(&x)? {
            x = snapped;
            certified_gap = g;
        }
    }
    let objective = instance.objective(&x)?;
    let sol = RelaxedSolution {
        x_bar: x,
        certified_gap,
        iterations,
        objective,
    };
    if certified_gap > target {
        return Err(Error::NotCertified {
            best: Box::new(sol),
            target,
        });
    }
    Ok(sol)
}

/// Clamps to the box and shrinks until the budget holds exactly (checked in
/// rational arithmetic).
fn make_feasible(x: &mut [f64], u: &[f64], sigma: usize) {
    for (v, &ub) in x.iter_mut().zip(u) {
        *v = v.clamp(0.0, ub);
    }
    let limit = exact::from_int(sigma as i64);
    for _ in 0..64 {
        let total = x
            .iter()
            .zip(u)
            .filter(|(v, _)| **v != 0.0)
            .fold(Rational::zero(), |acc, (v, ub)| {
                acc + exact::to_rational(*v) / exact::from_int(*ub as i64)
            });
        if total <= limit {
            return;
        }
        let scale = (sigma as f64 / exact::to_f64(&total)) * (1.0 - 4.0 * f64::EPSILON);
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Exact check of relaxation feasibility.
fn check_feasible(instance: &ProblemInstance, x: &[Rational]) -> Result<()> {
    let mut budget = Rational::zero();
    for (j, v) in x.iter().enumerate() {
        let ub = exact::from_int(instance.upper(j));
        if *v < Rational::zero() || *v > ub {
            return Err(Error::Infeasible(format!(
                "x[{j}] = {} outside [0, {}]",
                exact::to_f64(v),
                instance.upper(j)
            )));
        }
        budget += v / ub;
    }
    if budget > exact::from_int(instance.sigma_eff() as i64) {
        return Err(Error::Infeasible(format!(
            "budget sum x_i/u_i = {} exceeds sigma = {}",
            exact::to_f64(&budget),
            instance.sigma()
        )));
    }
    Ok(())
}

fn is_fractional(instance: &ProblemInstance, j: usize, v: &Rational) -> bool {
    *v > Rational::zero() && *v < exact::from_int(instance.upper(j))
}

/// Rational version of [`reduce_to_few_fractionals`]: `A x'` equals `A x`
/// exactly.
pub fn reduce_to_few_fractionals_exact(
    instance: &ProblemInstance,
    x: &[Rational],
) -> Result<Vec<Rational>> {
    if x.len() != instance.n() {
        return Err(Error::DimensionMismatch {
            expected: instance.n(),
            found: x.len(),
        });
    }
    check_feasible(instance, x)?;
    let m = instance.m();
    let mut x = x.to_vec();
    let mut frac: Vec<usize> = (0..x.len())
        .filter(|&j| is_fractional(instance, j, &x[j]))
        .collect();

    while frac.len() > m {
        let chosen: Vec<usize> = frac[..m + 1].to_vec();
        let cols: Vec<Vec<i64>> = chosen.iter().map(|&j| instance.column(j)).collect();
        let mut d = exact::kernel_vector(&cols).expect("m + 1 columns in R^m are dependent");
        let slope = chosen
            .iter()
            .zip(&d)
            .fold(Rational::zero(), |acc, (&j, dj)| {
                acc + dj / exact::from_int(instance.upper(j))
            });
        if slope > Rational::zero() {
            d.iter_mut().for_each(|v| *v = -v.clone());
        }
        // longest step keeping every moved coordinate inside its bounds
        let mut step: Option<Rational> = None;
        for (&j, dj) in chosen.iter().zip(&d) {
            let room = if dj > &Rational::zero() {
                (exact::from_int(instance.upper(j)) - &x[j]) / dj
            } else if dj < &Rational::zero() {
                -&x[j] / dj
            } else {
                continue;
            };
            step = Some(match step {
                Some(s) if s <= room => s,
                _ => room,
            });
        }
        let step = step.expect("kernel vector is nonzero");
        for (&j, dj) in chosen.iter().zip(&d) {
            x[j] += &step * dj;
        }
        frac.retain(|&j| is_fractional(instance, j, &x[j]));
    }
    Ok(x)
}

/// Returns `x'` with `A x' = A x`, the same box and no larger budget
/// `sum x_i / u_i`, and at most `m` entries strictly inside their bounds.
/// The kernel walk runs in exact rational arithmetic; the result is rounded
/// to the nearest doubles at the end.
pub fn reduce_to_few_fractionals(instance: &ProblemInstance, x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x"));
    }
    let exact_x: Vec<Rational> = x.iter().map(|&v| exact::to_rational(v)).collect();
    let reduced = reduce_to_few_fractionals_exact(instance, &exact_x)?;
    Ok(reduced.iter().map(exact::to_f64).collect())
}

/// Number of entries strictly between their bounds.
pub fn count_fractional(instance: &ProblemInstance, x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .filter(|(j, &v)| v > 0.0 && v < instance.upper(*j) as f64)
        .count()
}

/// `sum x_i / u_i` in exact arithmetic.
pub fn budget_exact(instance: &ProblemInstance, x: &[Rational]) -> Rational {
    x.iter()
        .enumerate()
        .fold(Rational::zero(), |acc, (j, v)| {
            acc + v / exact::from_int(instance.upper(j))
        })
}
