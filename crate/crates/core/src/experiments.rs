//! Monte-Carlo checks of the easy-target geometry: targets deep inside the
//! image polytope are hit exactly, and targets sampled from its
//! `lambda`-neighborhood are often solved by an integral relaxed optimum.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::proximity::round_fractional_part;
use crate::relaxation::{linear_minimization, reduce_to_few_fractionals, solve_relaxation, RelaxedSolution};
use crate::rng::{self, Rng};
use crate::solver::{solve_exact, SolverConfig};

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-7;
pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;
/// Relaxation accuracy in the far-target check (gap `1e-10`).
pub const TIGHT_EPSILON: f64 = 1e-5;
/// Objective below which a target counts as hit exactly.
pub const EXACT_TOL: f64 = 1e-6;
/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959964;

const MEMBERSHIP_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub instance: ProblemInstance,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub membership_tol: f64,
    pub rejection_budget: u64,
}

impl SamplingConfig {
    pub fn new(instance: ProblemInstance, lambda: f64, trials: usize, seed: u64) -> Self {
        Self {
            instance,
            lambda,
            trials,
            seed,
            membership_tol: DEFAULT_MEMBERSHIP_TOL,
            rejection_budget: DEFAULT_REJECTION_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.membership_tol > 0.0) || self.rejection_budget == 0 {
            return Err(Error::InvalidArgument(
                "membership tolerance and rejection budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Interior,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub objective_relax: f64,
    pub objective_exact: f64,
    /// The sparse optimum equals the relaxed optimum and some relaxed
    /// optimum is integral.
    pub integral_optimal: bool,
    /// The sparse objective is at most [`EXACT_TOL`].
    pub exact: bool,
    /// The sparse objective matches the relaxation lower bound.
    pub values_match: bool,
    /// Proposals drawn before acceptance (1 for the interior check).
    pub proposals: u64,
}

impl TrialRecord {
    fn flags(&self) -> String {
        [
            (self.exact, "exact"),
            (self.integral_optimal, "integral_optimal"),
            (self.values_match, "values_match"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect::<Vec<_>>()
        .join(";")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frequency: f64,
    /// Predicted lower bound on the frequency; `None` for the interior check,
    /// where the prediction is 1.
    pub rho: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub lambda: f64,
    pub membership_tol: f64,
    pub trials: Vec<TrialRecord>,
    pub successes: usize,
    pub summary: Summary,
}

impl ExperimentReport {
    fn build(kind: ExperimentKind, lambda: f64, tol: f64, trials: Vec<TrialRecord>, rho: Option<f64>) -> Self {
        let successes = trials
            .iter()
            .filter(|t| match kind {
                ExperimentKind::Interior => t.exact,
                ExperimentKind::Far => t.integral_optimal,
            })
            .count();
        let n = trials.len();
        let (ci_low, ci_high) = wilson_interval(successes, n, WILSON_Z);
        Self {
            kind,
            lambda,
            membership_tol: tol,
            successes,
            summary: Summary {
                frequency: successes as f64 / n.max(1) as f64,
                rho,
                ci_low,
                ci_high,
            },
            trials,
        }
    }

    /// Half the width of the Wilson interval.
    pub fn halfwidth(&self) -> f64 {
        (self.summary.ci_high - self.summary.ci_low) / 2.0
    }

    /// `trial,lambda,objective_relax,objective_exact,flags` with `;`-separated flags.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,lambda,objective_relax,objective_exact,flags\n");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{}",
                t.trial,
                t.lambda,
                t.objective_relax,
                t.objective_exact,
                t.flags()
            );
        }
        out
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `(lambda / (lambda + sigma sqrt(m) ||A||_inf))^m`.
pub fn rho_bound(instance: &ProblemInstance, lambda: f64) -> f64 {
    let scale = instance.sigma_eff() as f64 * (instance.m() as f64).sqrt() * instance.a_max().as_f64();
    if lambda + scale == 0.0 {
        return 1.0;
    }
    (lambda / (lambda + scale)).powi(instance.m() as i32)
}

/// `c m^{3/2} sigma ||A||_inf`, the neighborhood radius used in the checks.
pub fn lambda_for_multiplier(instance: &ProblemInstance, c: f64) -> f64 {
    c * (instance.m() as f64).powf(1.5) * instance.sigma_eff() as f64 * instance.a_max().as_f64()
}

/// Per-row range of `A x` over the relaxed feasible set.
pub fn image_bounding_box(instance: &ProblemInstance) -> Vec<(f64, f64)> {
    let u = instance.upper_f64();
    let sigma = instance.sigma_eff();
    (0..instance.m())
        .map(|i| {
            let row: Vec<f64> = instance.row(i).iter().map(|&v| v as f64).collect();
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            let value = |s: Vec<f64>| row.iter().zip(&s).map(|(a, x)| a * x).sum::<f64>();
            (value(linear_minimization(&row, sigma, &u)), value(linear_minimization(&neg, sigma, &u)))
        })
        .collect()
}

/// Relaxed solve used as the distance oracle: the best iterate is kept when
/// the gap target is below the floating-point floor.
fn projection(instance: &ProblemInstance, tol: f64) -> Result<RelaxedSolution> {
    match solve_relaxation(instance, tol, MEMBERSHIP_ITERS) {
        Ok(r) => Ok(r),
        Err(Error::NotCertified { best, .. }) => Ok(*best),
        Err(e) => Err(e),
    }
}

/// Uniform sample from the `lambda`-neighborhood of the image polytope,
/// with the number of proposals used.
pub fn sample_from_q_plus_ball_counted(
    instance: &ProblemInstance,
    lambda: f64,
    tol: f64,
    budget: u64,
    rng: &mut Rng,
) -> Result<(Vec<f64>, u64)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let bbox = image_bounding_box(instance);
    for proposal in 1..=budget {
        let b: Vec<f64> = bbox
            .iter()
            .map(|&(lo, hi)| {
                let (lo, hi) = (lo - lambda, hi + lambda);
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        let proj = projection(&instance.with_target(b.clone())?, tol)?;
        if proj.objective <= lambda + tol.max(proj.certified_gap.sqrt()) {
            return Ok((b, proposal));
        }
    }
    Err(Error::RejectionBudget(budget))
}

pub fn sample_from_q_plus_ball(instance: &ProblemInstance, lambda: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    sample_from_q_plus_ball_counted(instance, lambda, DEFAULT_MEMBERSHIP_TOL, DEFAULT_REJECTION_BUDGET, rng)
        .map(|(b, _)| b)
}

/// Uniform point of the relaxed feasible set scaled by `(sigma - m + 1) / sigma`.
pub fn sample_shrunk_point(instance: &ProblemInstance, budget: u64, rng: &mut Rng) -> Result<Vec<f64>> {
    let sigma = instance.sigma_eff() as f64;
    let factor = (sigma - instance.m() as f64 + 1.0) / sigma;
    for _ in 0..budget {
        let t: Vec<f64> = (0..instance.n()).map(|_| rng.gen::<f64>()).collect();
        if t.iter().sum::<f64>() <= sigma {
            return Ok(t
                .iter()
                .enumerate()
                .map(|(j, v)| v * factor * instance.upper(j) as f64)
                .collect());
        }
    }
    Err(Error::RejectionBudget(budget))
}

fn in_pool_order<T: Send>(trials: usize, job: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..trials).into_par_iter().map(job).collect()
}

/// Targets `b = A x` with `x` drawn from the shrunk relaxed set; every one
/// should be matched exactly by a sparse solution.
pub fn check_interior_exactness(instance: &ProblemInstance, trials: usize, seed: u64) -> Result<ExperimentReport> {
    if instance.sigma_eff() < instance.m() {
        return Err(Error::InvalidArgument(format!(
            "interior check needs sigma >= m, got sigma = {}, m = {}",
            instance.sigma(),
            instance.m()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let records = in_pool_order(trials, |trial| {
        let mut rng = rng::trial_stream(seed, trial as u64);
        let x = sample_shrunk_point(instance, DEFAULT_REJECTION_BUDGET, &mut rng)?;
        let b = instance.apply(&x)?;
        let report = solve_exact(&instance.with_target(b.clone())?, &SolverConfig::default())?;
        let exact = report.best.objective <= EXACT_TOL;
        Ok(TrialRecord {
            trial,
            b,
            lambda: 0.0,
            objective_relax: report.relaxation.objective,
            objective_exact: report.best.objective,
            integral_optimal: exact && is_integral(instance, &report.best.x),
            exact,
            values_match: report.best.objective <= report.relaxation.lower_bound() + EXACT_TOL,
            proposals: 1,
        })
    })?;
    Ok(ExperimentReport::build(ExperimentKind::Interior, 0.0, 0.0, records, None))
}

fn is_integral(instance: &ProblemInstance, x: &[f64]) -> bool {
    x.iter().enumerate().all(|(j, &v)| v == 0.0 || v == instance.upper(j) as f64)
}

/// Targets sampled from the `lambda`-neighborhood; a trial succeeds when an
/// integral relaxed optimum is also optimal for the sparse problem.
pub fn check_far_target_probability(config: &SamplingConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let instance = &config.instance;
    let solver = SolverConfig {
        epsilon: Some(TIGHT_EPSILON),
        ..SolverConfig::default()
    };
    let records = in_pool_order(config.trials, |trial| {
        let mut rng = rng::trial_stream(config.seed, trial as u64);
        let (b, proposals) = sample_from_q_plus_ball_counted(
            instance,
            config.lambda,
            config.membership_tol,
            config.rejection_budget,
            &mut rng,
        )?;
        let target = instance.with_target(b.clone())?;
        let report = solve_exact(&target, &solver)?;
        let relaxed = &report.relaxation;
        let lower = relaxed.lower_bound();
        let exact_obj = report.best.objective;
        let values_match = exact_obj <= lower + EXACT_TOL;

        let reduced = reduce_to_few_fractionals(&target, &relaxed.x_bar)?;
        let rounded_hits = round_fractional_part(&target, &reduced)
            .map(|r| is_integral(&target, &r.x) && r.objective <= lower + EXACT_TOL)
            .unwrap_or(false);
        let integral_exists =
            is_integral(&target, &reduced) || is_integral(&target, &report.best.x) || rounded_hits;
        Ok(TrialRecord {
            trial,
            b,
            lambda: config.lambda,
            objective_relax: relaxed.objective,
            objective_exact: exact_obj,
            integral_optimal: values_match && integral_exists,
            exact: exact_obj <= EXACT_TOL,
            values_match,
            proposals,
        })
    })?;
    Ok(ExperimentReport::build(
        ExperimentKind::Far,
        config.lambda,
        config.membership_tol,
        records,
        Some(rho_bound(instance, config.lambda)),
    ))
}

/// Uniform integer matrix with entries in `[-amax, amax]` and target zero.
pub fn random_instance(m: usize, n: usize, sigma: usize, amax: i64, rng: &mut Rng) -> Result<ProblemInstance> {
    let rows = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(-amax..=amax)).collect())
        .collect();
    ProblemInstance::new(rows, vec![0.0; m], sigma)
}

/// Random instance whose target is `A x` for a random binary `x` with
/// `sigma` nonzeros, so the optimum is zero.
pub fn planted_instance(m: usize, n: usize, sigma: usize, amax: i64, rng: &mut Rng) -> Result<ProblemInstance> {
    let inst = random_instance(m, n, sigma, amax, rng)?;
    let picked = rand::seq::index::sample(rng, n, sigma.min(n));
    let mut x = vec![0.0; n];
    for j in picked.iter() {
        x[j] = 1.0;
    }
    let b = inst.apply(&x)?;
    inst.with_target(b)
}

/// Random matrix as in [`random_instance`] with a target uniform in
/// `[-spread, spread]^m`.
pub fn random_target_instance(
    m: usize,
    n: usize,
    sigma: usize,
    amax: i64,
    spread: f64,
    rng: &mut Rng,
) -> Result<ProblemInstance> {
    let inst = random_instance(m, n, sigma, amax, rng)?;
    let b = (0..m).map(|_| rng.gen_range(-spread..=spread)).collect();
    inst.with_target(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_degenerate_cases() {
        let (lo, hi) = wilson_interval(1, 1, WILSON_Z);
        assert!(lo > 0.0 && lo < 0.5 && hi == 1.0);
        let (lo, hi) = wilson_interval(0, 10, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.2 && hi < 0.35);
    }

    #[test]
    fn rho_examples() {
        let i = ProblemInstance::new(vec![vec![1]], vec![0.0], 1).unwrap();
        assert!((rho_bound(&i, 1.0) - 0.5).abs() < 1e-15);
        let lam = lambda_for_multiplier(&i, 2.0);
        assert!(rho_bound(&i, lam) >= 0.5);
        let i = ProblemInstance::new(vec![vec![1, 2, 0], vec![0, 1, -2]], vec![0.0; 2], 2).unwrap();
        for c in [1.0, 2.0, 4.0] {
            let m: f64 = 2.0;
            let want = (c * m / (c * m + 1.0)).powi(2);
            assert!((rho_bound(&i, lambda_for_multiplier(&i, c)) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interval_sampler_stays_in_range() {
        let i = ProblemInstance::new(vec![vec![1]], vec![0.0], 1).unwrap();
        let mut rng = rng::from_seed(3);
        let mut sum = 0.0;
        let trials = 400;
        for _ in 0..trials {
            let (b, proposals) =
                sample_from_q_plus_ball_counted(&i, 1.0, DEFAULT_MEMBERSHIP_TOL, 100, &mut rng).unwrap();
            assert!(b[0] >= -1.0 && b[0] <= 2.0);
            assert_eq!(proposals, 1);
            sum += b[0];
        }
        // uniform on [-1, 2]: mean 0.5, sd sqrt(0.75)
        let stderr = 0.75f64.sqrt() / (trials as f64).sqrt();
        assert!((sum / trials as f64 - 0.5).abs() <= 3.0 * stderr);
    }

    #[test]
    fn zero_lambda_samples_lie_in_image() {
        let i = ProblemInstance::new(vec![vec![1, 2, -1], vec![0, 1, 1]], vec![0.0; 2], 2).unwrap();
        let mut rng = rng::from_seed(5);
        for _ in 0..5 {
            let b = sample_from_q_plus_ball(&i, 0.0, &mut rng).unwrap();
            let d = projection(&i.with_target(b).unwrap(), 1e-9).unwrap();
            assert!(d.objective <= 1e-6, "{}", d.objective);
        }
    }

    #[test]
    fn interior_single_trial() {
        let i = ProblemInstance::new(vec![vec![1, 2, -1, 1], vec![0, 1, 1, 2]], vec![0.0; 2], 2).unwrap();
        let r = check_interior_exactness(&i, 3, 11).unwrap();
        assert_eq!(r.trials.len(), 3);
        assert_eq!(r.summary.frequency, 1.0);
        assert!(check_interior_exactness(&i.with_sigma(1).unwrap(), 1, 0).is_err());
    }

    #[test]
    fn far_report_is_well_formed() {
        let i = ProblemInstance::new(vec![vec![1, 2, -1]], vec![0.0], 2).unwrap();
        let cfg = SamplingConfig::new(i.clone(), lambda_for_multiplier(&i, 2.0), 1, 4);
        let r = check_far_target_probability(&cfg).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert!(r.summary.ci_low <= r.summary.frequency && r.summary.frequency <= r.summary.ci_high);
        assert!(r.halfwidth() > 0.2);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("trial,lambda,objective_relax,objective_exact,flags"));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = planted_instance(2, 6, 2, 3, &mut rng::from_seed(9)).unwrap();
        let b = planted_instance(2, 6, 2, 3, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a, b);
        let r = solve_exact(&a, &SolverConfig::default()).unwrap();
        assert!(r.best.objective <= 1e-6);
    }
}
