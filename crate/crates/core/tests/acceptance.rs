//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line;
//! run with `--nocapture` to see them.

use std::time::Instant;

use cubesparse::exact::{self, Rational};
use cubesparse::experiments::{
    check_far_target_probability, check_interior_exactness, lambda_for_multiplier, random_instance,
    random_target_instance, SamplingConfig,
};
use cubesparse::extension::BoxLeastSquares;
use cubesparse::feasibility::{solve_feasibility, FeasibilityQuery};
use cubesparse::relaxation::{budget_exact, count_fractional, reduce_to_few_fractionals_exact, solve_relaxation};
use cubesparse::numeric::loglog_slope;
use cubesparse::rng;
use cubesparse::solver::{solve_exact, solve_oracle, SolverConfig, DEFAULT_ORACLE_CAP};
use cubesparse::{Error, ProblemInstance};
use rand::Rng as _;

const OBJECTIVE_TOL: f64 = 1e-6;
const PROXIMITY_SLACK: f64 = 1e-4;
const CLOSENESS_SLACK: f64 = 1e-8;
const KKT_TOL: f64 = 1e-6;
const PG_TOL: f64 = 1e-6;
const REGRESSION_TOL: f64 = 1e-9;
const SLOPE_LIMIT: f64 = 2.2;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {id:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} {name} failed: {detail}");
}

/// Random integer instance with `m in 1..=3`, `n in 4..=10`,
/// `||A||_inf in 1..=3`, `sigma in 1..=4`, and a real target near the image.
fn suite_instance(seed: u64) -> ProblemInstance {
    let mut rng = rng::from_seed(seed);
    let m = rng.gen_range(1..=3);
    let n = rng.gen_range(4..=10);
    let amax = rng.gen_range(1..=3);
    let sigma = rng.gen_range(1..=4);
    let inst = random_instance(m, n, sigma, amax, &mut rng).unwrap();
    let scale = rng.gen_range(0.0..1.5) * sigma as f64 / n as f64;
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * scale).collect();
    let b: Vec<f64> = inst
        .apply(&w)
        .unwrap()
        .iter()
        .map(|v| v + rng.gen_range(-1.0..1.0))
        .collect();
    inst.with_target(b).unwrap()
}

fn image_distance(inst: &ProblemInstance, x: &[f64], y: &[f64]) -> f64 {
    let ax = inst.apply(x).unwrap();
    let ay = inst.apply(y).unwrap();
    ax.iter().zip(&ay).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut searched = 0;
    for seed in 0..200 {
        let inst = suite_instance(seed);
        let exact = solve_exact(&inst, &SolverConfig::default()).unwrap();
        let oracle = solve_oracle(&inst, DEFAULT_ORACLE_CAP).unwrap();
        exact.best.verify(&inst).unwrap();
        searched += usize::from(exact.stats.support_guesses > 0);
        let diff = (exact.best.objective - oracle.objective).abs();
        worst = worst.max(diff);
        if diff > OBJECTIVE_TOL || exact.heuristic {
            failures.push(seed);
        }
    }
    verdict(
        1,
        "oracle equivalence",
        failures.is_empty(),
        &format!(
            "200 instances ({searched} needed the search), max |exact - oracle| = {worst:.3e}, failing seeds {failures:?}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_proximity() {
    let cfg = SolverConfig {
        epsilon: Some(1e-5),
        ..SolverConfig::default()
    };
    let mut worst_ratio = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..200 {
        let inst = suite_instance(seed);
        let r = solve_exact(&inst, &cfg).unwrap();
        let bound = 2.0 * (inst.m() as f64).powf(1.5) * inst.a_max().as_f64() + PROXIMITY_SLACK;
        let dist = image_distance(&inst, &r.best.x, &r.relaxation.x_bar);
        worst_ratio = worst_ratio.max(dist / bound);
        if dist > bound || r.relaxation.certified_gap > 1e-10 {
            failures.push(seed);
        }
    }
    verdict(
        2,
        "proximity",
        failures.is_empty(),
        &format!("max distance / bound = {worst_ratio:.3}, failing seeds {failures:?}"),
    );
}

#[test]
fn criterion_03_few_fractionals() {
    let mut failures = 0;
    let mut max_frac = 0;
    for seed in 0..500u64 {
        let mut rng = rng::from_seed(10_000 + seed);
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(m + 1..=12);
        let sigma = rng.gen_range(1..=n);
        let amax = rng.gen_range(1..=3);
        let inst = random_instance(m, n, sigma, amax, &mut rng).unwrap();
        // random point with budget at most sigma, some coordinates at bounds
        let mut x: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen::<f64>(),
            })
            .collect();
        let total: f64 = x.iter().sum();
        if total > sigma as f64 {
            let s = sigma as f64 / total * 0.999;
            x.iter_mut().for_each(|v| *v *= s);
        }
        let xr: Vec<Rational> = x.iter().map(|&v| exact::to_rational(v)).collect();
        let reduced = reduce_to_few_fractionals_exact(&inst, &xr).unwrap();
        let rows = (0..m).map(|i| inst.row(i).to_vec());
        let before = exact::apply(rows.clone(), &xr);
        let after = exact::apply(rows, &reduced);
        let as_f64: Vec<f64> = reduced.iter().map(exact::to_f64).collect();
        let frac = reduced
            .iter()
            .filter(|v| **v > Rational::from_integer(0.into()) && **v < Rational::from_integer(1.into()))
            .count();
        max_frac = max_frac.max(frac);
        let in_box = reduced
            .iter()
            .all(|v| *v >= Rational::from_integer(0.into()) && *v <= Rational::from_integer(1.into()));
        if frac > m || before != after || budget_exact(&inst, &reduced) > budget_exact(&inst, &xr) || !in_box {
            failures += 1;
        }
        assert!(count_fractional(&inst, &as_f64) <= m);
    }
    verdict(
        3,
        "few fractionals",
        failures == 0,
        &format!("500 points, max fractional count {max_frac}, {failures} failures"),
    );
}

#[test]
fn criterion_04_epsilon_closeness() {
    let mut checked = 0;
    let mut uncertified = 0;
    let mut failures = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..60u64 {
        let inst = suite_instance(20_000 + seed);
        let reference = solve_relaxation(&inst, 1e-6, 1_000_000).expect("reference certifies 1e-12");
        let ref_sq = reference.objective * reference.objective;
        for eps in [1.0, 0.1, 1e-2, 1e-3] {
            match solve_relaxation(&inst, eps, 1_000_000) {
                Ok(r) => {
                    checked += 1;
                    let excess = r.objective * r.objective - ref_sq - eps * eps;
                    worst = worst.max(excess);
                    if r.certified_gap > eps * eps || excess > CLOSENESS_SLACK {
                        failures.push((seed, eps));
                    }
                }
                Err(Error::NotCertified { .. }) => uncertified += 1,
                Err(e) => panic!("{e}"),
            }
        }
    }
    verdict(
        4,
        "epsilon closeness",
        failures.is_empty() && uncertified == 0,
        &format!(
            "{checked} solves, {uncertified} uncertified, max excess over eps^2 = {worst:.3e}, failures {failures:?}"
        ),
    );
}

#[test]
fn criterion_05_interior_targets() {
    let mut lines = Vec::new();
    let mut ok = true;
    for m in 1..=3usize {
        for sigma in [m, m + 1, m + 2] {
            let n = (2 * sigma).max(m + 2);
            let mut rng = rng::from_seed(30_000 + (m * 10 + sigma) as u64);
            let inst = random_instance(m, n, sigma, 2, &mut rng).unwrap();
            let r = check_interior_exactness(&inst, 100, 7 + sigma as u64).unwrap();
            ok &= r.summary.frequency == 1.0;
            lines.push(format!("m={m} sigma={sigma}: {}/100", r.successes));
        }
    }
    verdict(5, "interior targets", ok, &lines.join(", "));
}

#[test]
fn criterion_06_far_targets() {
    let mut lines = Vec::new();
    let mut ok = true;
    for m in 1..=3usize {
        let mut rng = rng::from_seed(40_000 + m as u64);
        let inst = random_instance(m, 6, 2, 1, &mut rng).unwrap();
        for c in [1.0, 2.0, 4.0] {
            let cfg = SamplingConfig::new(inst.clone(), lambda_for_multiplier(&inst, c), 500, 17);
            let r = check_far_target_probability(&cfg).unwrap();
            let rho = r.summary.rho.unwrap();
            let hw = r.halfwidth();
            let freq = r.summary.frequency;
            let mut pass = freq >= rho - 3.0 * hw;
            if c == 2.0 {
                pass &= freq >= 0.5 - 3.0 * hw;
            }
            ok &= pass;
            lines.push(format!("m={m} c={c}: freq {freq:.3} rho {rho:.3} hw {hw:.3}"));
        }
    }
    verdict(6, "far-target probability", ok, &lines.join("; "));
}

fn brute_feasibility(q: &FeasibilityQuery) -> Option<Vec<i64>> {
    let k = q.columns.len();
    (0u32..1 << k)
        .map(|mask| (0..k).map(|j| i64::from(mask >> (k - 1 - j) & 1 == 1)).collect::<Vec<_>>())
        .find(|y| q.verify(y))
}

#[test]
fn criterion_07_feasibility_dp() {
    let mut failures = 0;
    let mut feasible = 0;
    for seed in 0..1000u64 {
        let mut rng = rng::from_seed(50_000 + seed);
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(0..=16);
        let amax = rng.gen_range(0..=3);
        let columns: Vec<Vec<i64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(-amax..=amax)).collect())
            .collect();
        let budget = rng.gen_range(0..=n as i64);
        let target: Vec<i64> = if rng.gen_bool(0.5) {
            let y: Vec<i64> = (0..n).map(|_| i64::from(rng.gen_bool(0.3))).collect();
            (0..m).map(|i| columns.iter().zip(&y).map(|(c, v)| c[i] * v).sum()).collect()
        } else {
            (0..m).map(|_| rng.gen_range(-6..=6)).collect()
        };
        let q = FeasibilityQuery::binary(columns, target, budget);
        let dp = solve_feasibility(&q);
        let brute = brute_feasibility(&q);
        feasible += usize::from(brute.is_some());
        if dp != brute || dp.as_ref().is_some_and(|y| !q.verify(y)) {
            failures += 1;
        }
    }
    verdict(
        7,
        "feasibility DP",
        failures == 0,
        &format!("1000 queries, {feasible} feasible, {failures} disagreements"),
    );
}

/// Accelerated projected gradient on `0.5 ||rhs - A g||^2` over `[0, u]^k`.
fn projected_gradient(cols: &[Vec<f64>], rhs: &[f64], upper: &[f64], iters: usize) -> Vec<f64> {
    let k = cols.len();
    let lipschitz: f64 = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().max(1e-12);
    let grad = |g: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = (0..rhs.len())
            .map(|i| (0..k).map(|j| cols[j][i] * g[j]).sum::<f64>() - rhs[i])
            .collect();
        cols.iter().map(|c| c.iter().zip(&r).map(|(a, b)| a * b).sum()).collect()
    };
    let project = |g: &mut Vec<f64>| {
        for (v, u) in g.iter_mut().zip(upper) {
            *v = v.clamp(0.0, *u);
        }
    };
    let mut x = vec![0.0; k];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let gy = grad(&y);
        let mut next: Vec<f64> = y.iter().zip(&gy).map(|(a, b)| a - b / lipschitz).collect();
        project(&mut next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
    }
    x
}

fn residual_norm(cols: &[Vec<f64>], rhs: &[f64], g: &[f64]) -> f64 {
    (0..rhs.len())
        .map(|i| {
            let r = rhs[i] - cols.iter().zip(g).map(|(c, v)| c[i] * v).sum::<f64>();
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn criterion_08_extension_optimality() {
    let mut worst_kkt = 0.0f64;
    let mut worst_gap = 0.0f64;
    for seed in 0..500u64 {
        let mut rng = rng::from_seed(60_000 + seed);
        let m = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| rng.gen_range(-3..=3) as f64).collect())
            .collect();
        let upper: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=2) as f64).collect();
        let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let sol = BoxLeastSquares::new(m, &cols, &upper).unwrap().solve(&rhs);
        // KKT: g equals its projected-gradient step
        let r: Vec<f64> = (0..m)
            .map(|i| cols.iter().zip(&sol.g).map(|(c, v)| c[i] * v).sum::<f64>() - rhs[i])
            .collect();
        for j in 0..k {
            let gj: f64 = cols[j].iter().zip(&r).map(|(a, b)| a * b).sum();
            let stepped = (sol.g[j] - gj).clamp(0.0, upper[j]);
            worst_kkt = worst_kkt.max((stepped - sol.g[j]).abs());
        }
        let pg = projected_gradient(&cols, &rhs, &upper, 100_000);
        let diff = (sol.objective - residual_norm(&cols, &rhs, &pg)).abs();
        worst_gap = worst_gap.max(diff);
    }
    verdict(
        8,
        "extension optimality",
        worst_kkt <= KKT_TOL && worst_gap <= PG_TOL,
        &format!("500 cases, max KKT residual {worst_kkt:.3e}, max |bls - pg| {worst_gap:.3e}"),
    );
}

#[test]
fn criterion_09_upper_bound_regression() {
    let rows: Vec<Vec<i64>> = (0..4).map(|r| (0..4).map(|c| i64::from(r == c)).collect()).collect();
    let inst = ProblemInstance::new(rows, vec![1.0; 4], 2)
        .unwrap()
        .with_upper_bounds(vec![2; 4])
        .unwrap();
    let cfg = SolverConfig {
        epsilon: Some(1e-6),
        ..SolverConfig::default()
    };
    let r = solve_exact(&inst, &cfg).unwrap();
    let relax = r.relaxation.objective;
    let exact = r.best.objective;
    verdict(
        9,
        "bounded-variable regression",
        relax.abs() <= REGRESSION_TOL && (exact - 2f64.sqrt()).abs() <= REGRESSION_TOL,
        &format!("relaxation {relax:.3e}, exact {exact:.12}, box points {:.3e}", r.stats.box_points),
    );
}

#[test]
fn criterion_10_fixed_m_scaling() {
    let sizes = [10usize, 20, 40, 80];
    let cfg = SolverConfig {
        early_stop: false,
        ..SolverConfig::default()
    };
    let mut times = Vec::new();
    let mut states = Vec::new();
    for &n in &sizes {
        let mut rng = rng::from_seed(70_000 + n as u64);
        let inst = random_target_instance(2, n, 3, 2, 4.0, &mut rng).unwrap();
        let mut best = f64::INFINITY;
        let mut dp = 0;
        for _ in 0..3 {
            let t = Instant::now();
            let r = solve_exact(&inst, &cfg).unwrap();
            best = best.min(t.elapsed().as_secs_f64());
            dp = r.stats.dp_states;
        }
        times.push(best);
        states.push(dp as f64);
    }
    let ns: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let time_slope = loglog_slope(&ns, &times);
    let state_slope = loglog_slope(&ns, &states);
    verdict(
        10,
        "fixed-m scaling",
        time_slope <= SLOPE_LIMIT && state_slope <= SLOPE_LIMIT,
        &format!(
            "time slope {time_slope:.2}, DP state slope {state_slope:.2}, times {times:.4?}s, states {states:?}"
        ),
    );
}
