//! The exact pipeline: certified relaxation, proximity box around `A x_bar`,
//! guesses of the fractional support, integral feasibility for the rest,
//! and box least squares on the guessed support. Also the brute-force
//! oracle and a direct path for single-row instances.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::{extend, BoxLeastSquares, HARD_CAP};
use crate::feasibility::{distribute, reachable_sums, solve_feasibility, ColumnGroup, FeasibilityQuery};
use crate::numeric::norm2;
use crate::problem::{ProblemInstance, SparseSolution};
use crate::proximity::{compute_bounds, round_fractional_part, CandidateBox, ProximityBound, DEFAULT_ENUM_CAP};
use crate::relaxation::{
    default_epsilon, reduce_to_few_fractionals, solve_relaxation, RelaxedSolution, DEFAULT_MAX_ITERS,
};

pub const DEFAULT_SUPPORT_GUESS_CAP: u64 = 10_000_000;
pub const DEFAULT_ORACLE_CAP: u64 = 100_000_000;

/// Support guesses per parallel batch.
const BATCH: usize = 64;

/// Relative slack under which two objectives count as equal when pruning.
const PRUNE_TOL: f64 = 1e-9;

/// Which sizes of fractional-support guesses are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSizes {
    /// Every size from 0 to `min(m, sigma, n)`.
    Exhaustive,
    /// Only `min(m, sigma, n)`; smaller fractional parts are covered by
    /// letting guessed coordinates come out integral.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Identical columns are merged and one dynamic program per guess yields
    /// every reachable right-hand side in the box at once.
    Grouped,
    /// Every box point is tested with its own feasibility query and every
    /// witness is extended.
    PerTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relaxation accuracy; `None` means `sqrt(m) * ||A||_inf`.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    /// Most support guesses tried before the search is cut short and the
    /// result flagged heuristic.
    pub support_guess_cap: u64,
    /// Largest candidate box accepted.
    pub enum_cap: u64,
    pub support_sizes: SupportSizes,
    pub strategy: Strategy,
    /// Worker threads; `None` uses the global pool. Not serialized, since
    /// it never changes the result.
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Stop as soon as a candidate meets the relaxation lower bound. Turned
    /// off for benchmarks that measure the full search.
    pub early_stop: bool,
    /// Recorded in reports. The search itself uses no randomness.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iters: DEFAULT_MAX_ITERS,
            support_guess_cap: DEFAULT_SUPPORT_GUESS_CAP,
            enum_cap: DEFAULT_ENUM_CAP,
            support_sizes: SupportSizes::Exhaustive,
            strategy: Strategy::Grouped,
            threads: None,
            early_stop: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidArgument(format!("epsilon must be positive, got {e}")));
            }
        }
        if self.support_guess_cap == 0 || self.enum_cap == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument("caps must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub support_guesses: u64,
    pub box_points: f64,
    /// Right-hand sides `b*` examined.
    pub rhs_enumerated: u64,
    pub feasibility_calls: u64,
    pub feasible_found: u64,
    pub extensions: u64,
    /// Right-hand sides skipped by the lower bound.
    pub pruned: u64,
    pub dp_states: u64,
    /// `true` when the rounded relaxation already matched the lower bound.
    pub shortcut: bool,
    pub wall_time_ms: f64,
}

impl SolveStats {
    fn absorb(&mut self, other: &SolveStats) {
        self.rhs_enumerated += other.rhs_enumerated;
        self.feasibility_calls += other.feasibility_calls;
        self.feasible_found += other.feasible_found;
        self.extensions += other.extensions;
        self.pruned += other.pruned;
        self.dp_states += other.dp_states;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub best: SparseSolution,
    pub relaxation: RelaxedSolution,
    pub bounds: ProximityBound,
    pub candidate_box: CandidateBox,
    pub stats: SolveStats,
    /// Set when a cap cut the search short; `best` is then feasible but not
    /// proven optimal.
    pub heuristic: bool,
    pub config: SolverConfig,
}

impl SolveReport {
    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.stats.wall_time_ms = 0.0;
        r.config.threads = None;
        r
    }
}

/// Columns grouped by `(column, upper bound)`, in order of first appearance.
#[derive(Debug, Clone)]
struct Groups {
    groups: Vec<ColumnGroup>,
    indices: Vec<Vec<usize>>,
}

impl Groups {
    fn new(instance: &ProblemInstance) -> Self {
        let mut groups: Vec<ColumnGroup> = Vec::new();
        let mut indices: Vec<Vec<usize>> = Vec::new();
        let mut lookup = std::collections::HashMap::new();
        for j in 0..instance.n() {
            let key = (instance.column(j), instance.upper(j));
            let t = *lookup.entry(key.clone()).or_insert_with(|| {
                groups.push(ColumnGroup {
                    column: key.0,
                    upper: key.1,
                    multiplicity: 0,
                });
                indices.push(Vec::new());
                groups.len() - 1
            });
            groups[t].multiplicity += 1;
            indices[t].push(j);
        }
        Self { groups, indices }
    }

    /// Copies per group for every multiset of `size` columns, in
    /// lexicographic order; stops after `cap` entries.
    fn multisets(&self, size: usize, cap: usize, out: &mut Vec<Vec<usize>>) {
        fn rec(
            g: &Groups,
            t: usize,
            left: usize,
            cur: &mut Vec<usize>,
            cap: usize,
            out: &mut Vec<Vec<usize>>,
        ) {
            if out.len() >= cap {
                return;
            }
            if left == 0 {
                out.push(cur.clone());
                return;
            }
            if t == g.groups.len() {
                return;
            }
            let most = g.groups[t].multiplicity.min(left);
            for c in (0..=most).rev() {
                cur[t] = c;
                rec(g, t + 1, left - c, cur, cap, out);
            }
            cur[t] = 0;
        }
        let mut cur = vec![0; self.groups.len()];
        rec(self, 0, size, &mut cur, cap, out);
    }

    /// Guessed support: the first `copies[t]` indices of each group.
    fn support(&self, copies: &[usize]) -> Vec<usize> {
        let mut s: Vec<usize> = copies
            .iter()
            .enumerate()
            .flat_map(|(t, &c)| self.indices[t][..c].iter().copied())
            .collect();
        s.sort_unstable();
        s
    }
}

struct Context<'a> {
    instance: &'a ProblemInstance,
    groups: &'a Groups,
    bx: &'a CandidateBox,
    budget_total: usize,
    /// Best objective from earlier batches; anything provably worse is skipped.
    incumbent: f64,
}

fn prune_margin(v: f64) -> f64 {
    PRUNE_TOL * v.abs().max(1.0)
}

struct JobResult {
    best: Option<SparseSolution>,
    stats: SolveStats,
}

fn offer(best: &mut Option<SparseSolution>, cand: SparseSolution) {
    *best = Some(match best.take() {
        None => cand,
        Some(b) => b.keep_better(cand),
    });
}

fn threshold(ctx: &Context, best: &Option<SparseSolution>) -> f64 {
    let t = best.as_ref().map_or(ctx.incumbent, |b| b.objective.min(ctx.incumbent));
    t + prune_margin(t)
}

fn grouped_job(ctx: &Context, copies: &[usize]) -> Result<JobResult> {
    let inst = ctx.instance;
    let f_size: usize = copies.iter().sum();
    let support = ctx.groups.support(copies);
    let mut stats = SolveStats {
        feasibility_calls: 1,
        ..SolveStats::default()
    };

    // groups with copies left after the guess, and where they came from
    let mut rest = Vec::new();
    let mut origin = Vec::new();
    for (t, g) in ctx.groups.groups.iter().enumerate() {
        if g.multiplicity > copies[t] {
            rest.push(ColumnGroup {
                multiplicity: g.multiplicity - copies[t],
                ..g.clone()
            });
            origin.push(t);
        }
    }
    let sums = reachable_sums(&rest, ctx.budget_total - f_size, ctx.bx);
    stats.dp_states = sums.states() as u64;

    let cols: Vec<Vec<i64>> = support.iter().map(|&j| inst.column(j)).collect();
    let bounds: Vec<f64> = support.iter().map(|&j| inst.upper(j) as f64).collect();
    let bls = BoxLeastSquares::from_int_columns(inst.m(), &cols, &bounds)?;
    let reach = bls.reach();

    let mut best: Option<SparseSolution> = None;
    let b = inst.b();
    for (target, _) in sums.targets() {
        stats.rhs_enumerated += 1;
        stats.feasible_found += 1;
        let rhs: Vec<f64> = b.iter().zip(target).map(|(bi, t)| bi - *t as f64).collect();
        if norm2(&rhs) - reach > threshold(ctx, &best) {
            stats.pruned += 1;
            continue;
        }
        stats.extensions += 1;
        let sol = bls.solve(&rhs);
        if sol.objective > threshold(ctx, &best) {
            continue;
        }
        let choices = sums.witness(target).expect("target was reached");
        let mut x = vec![0.0; inst.n()];
        for (&j, g) in support.iter().zip(&sol.g) {
            x[j] = *g;
        }
        for (r, choice) in choices.iter().enumerate() {
            let t = origin[r];
            let free = &ctx.groups.indices[t][copies[t]..];
            for (&j, v) in free.iter().zip(distribute(*choice, rest[r].upper)) {
                x[j] = v as f64;
            }
        }
        offer(&mut best, SparseSolution::from_dense(inst, x)?);
    }
    Ok(JobResult { best, stats })
}

fn per_target_job(ctx: &Context, copies: &[usize]) -> Result<JobResult> {
    let inst = ctx.instance;
    let support = ctx.groups.support(copies);
    let outside: Vec<usize> = (0..inst.n()).filter(|j| !support.contains(j)).collect();
    let query_base = FeasibilityQuery {
        columns: outside.iter().map(|&j| inst.column(j)).collect(),
        target: Vec::new(),
        budget: (ctx.budget_total - support.len()) as i64,
        upper: inst
            .has_upper_bounds()
            .then(|| outside.iter().map(|&j| inst.upper(j)).collect()),
    };
    let cols: Vec<Vec<i64>> = support.iter().map(|&j| inst.column(j)).collect();
    let bounds: Vec<f64> = support.iter().map(|&j| inst.upper(j) as f64).collect();
    let reach = BoxLeastSquares::from_int_columns(inst.m(), &cols, &bounds)?.reach();

    let mut stats = SolveStats::default();
    let mut best: Option<SparseSolution> = None;
    let b = inst.b();
    for target in ctx.bx.iter() {
        stats.rhs_enumerated += 1;
        let rhs: Vec<f64> = b.iter().zip(&target).map(|(bi, t)| bi - *t as f64).collect();
        if norm2(&rhs) - reach > threshold(ctx, &best) {
            stats.pruned += 1;
            continue;
        }
        stats.feasibility_calls += 1;
        let query = FeasibilityQuery {
            target,
            ..query_base.clone()
        };
        let Some(y) = solve_feasibility(&query) else {
            continue;
        };
        stats.feasible_found += 1;
        let mut z = vec![0i64; inst.n()];
        for (&j, v) in outside.iter().zip(y) {
            z[j] = v;
        }
        stats.extensions += 1;
        offer(&mut best, extend(inst, &z, &support)?);
    }
    Ok(JobResult { best, stats })
}

fn run_in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Certified relaxation, falling back to the best iterate with its realized
/// accuracy when the requested gap is below the floating-point floor.
fn relax(instance: &ProblemInstance, epsilon: f64, max_iters: usize) -> Result<(RelaxedSolution, f64)> {
    match solve_relaxation(instance, epsilon, max_iters) {
        Ok(r) => Ok((r, epsilon)),
        Err(Error::NotCertified { best, .. }) => {
            let eps = epsilon.max(best.certified_gap.sqrt());
            Ok((*best, eps))
        }
        Err(e) => Err(e),
    }
}

/// Optimal solution of the sparse problem.
pub fn solve_exact(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let start = Instant::now();
    let epsilon = config.epsilon.unwrap_or_else(|| default_epsilon(instance));
    let (relaxation, epsilon) = relax(instance, epsilon, config.max_iters)?;
    let bounds = compute_bounds(instance, epsilon);
    let center = instance.apply(&relaxation.x_bar)?;
    let bx = CandidateBox::around(&center, bounds.box_radius());
    let mut stats = SolveStats {
        box_points: bx.count(),
        ..SolveStats::default()
    };
    if stats.box_points > config.enum_cap as f64 {
        return Err(Error::EnumerationCap {
            points: stats.box_points,
            cap: config.enum_cap,
        });
    }

    // safety candidates: the rounded relaxation and zero
    let mut safety = SparseSolution::zero(instance);
    if let Ok(reduced) = reduce_to_few_fractionals(instance, &relaxation.x_bar) {
        if let Ok(rounded) = round_fractional_part(instance, &reduced) {
            safety = safety.keep_better(rounded);
        }
    }
    let report = |best, stats, heuristic| SolveReport {
        best,
        relaxation: relaxation.clone(),
        bounds,
        candidate_box: bx.clone(),
        stats,
        heuristic,
        config: config.clone(),
    };
    let lower = relaxation.lower_bound();
    let met = |obj: f64| config.early_stop && obj <= lower + 1e-12 * lower.max(1.0);
    if met(safety.objective) {
        stats.shortcut = true;
        stats.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(report(safety, stats, false));
    }

    let groups = Groups::new(instance);
    let budget_total = instance.sigma_eff();
    let largest = instance.m().min(budget_total);
    let sizes: Vec<usize> = match config.support_sizes {
        SupportSizes::Exhaustive => (0..=largest).rev().collect(),
        SupportSizes::Full => vec![largest],
    };
    if largest > HARD_CAP {
        return Err(Error::SupportTooLarge(largest));
    }
    let cap = usize::try_from(config.support_guess_cap).unwrap_or(usize::MAX);
    let mut guesses = Vec::new();
    for &k in &sizes {
        groups.multisets(k, cap.saturating_add(1), &mut guesses);
    }
    let heuristic = guesses.len() > cap;
    guesses.truncate(cap);

    // Batches of fixed size run in parallel and merge in order, so both the
    // result and the counters are independent of scheduling. The search
    // stops once the relaxation lower bound is met.
    let mut best = safety;
    let mut processed = 0;
    for batch in guesses.chunks(BATCH) {
        if met(best.objective) {
            break;
        }
        let ctx = Context {
            instance,
            groups: &groups,
            bx: &bx,
            budget_total,
            incumbent: best.objective,
        };
        let results: Vec<JobResult> = run_in_pool(config.threads, || {
            batch
                .par_iter()
                .map(|copies| match config.strategy {
                    Strategy::Grouped => grouped_job(&ctx, copies),
                    Strategy::PerTarget => per_target_job(&ctx, copies),
                })
                .collect::<Result<Vec<_>>>()
        })??;
        for r in results {
            stats.absorb(&r.stats);
            if let Some(b) = r.best {
                best = best.keep_better(b);
            }
        }
        processed += batch.len();
    }
    stats.support_guesses = processed as u64;
    stats.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report(best, stats, heuristic))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `visit` on every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return Ok(());
    }
    loop {
        visit(&idx)?;
        let Some(p) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
            return Ok(());
        };
        idx[p] += 1;
        for q in p + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Number of active-set guesses the oracle would sweep.
pub fn oracle_work(instance: &ProblemInstance) -> f64 {
    let n = instance.n();
    (0..=instance.sigma_eff())
        .map(|k| binomial(n, k) * 3f64.powi(k as i32))
        .sum()
}

/// Brute force: box least squares on every support of size at most sigma.
pub fn solve_oracle(instance: &ProblemInstance, cap: u64) -> Result<SparseSolution> {
    let work = oracle_work(instance);
    if work > cap as f64 {
        return Err(Error::OracleCap { work, cap });
    }
    let s = instance.sigma_eff();
    if s > HARD_CAP {
        return Err(Error::SupportTooLarge(s));
    }
    let mut best = SparseSolution::zero(instance);
    for k in 1..=s {
        for_each_subset(instance.n(), k, &mut |support| {
            let cols: Vec<Vec<i64>> = support.iter().map(|&j| instance.column(j)).collect();
            let bounds: Vec<f64> = support.iter().map(|&j| instance.upper(j) as f64).collect();
            let g = BoxLeastSquares::from_int_columns(instance.m(), &cols, &bounds)?
                .solve(instance.b())
                .g;
            let mut x = vec![0.0; instance.n()];
            for (&j, v) in support.iter().zip(g) {
                x[j] = v;
            }
            let cand = SparseSolution::from_dense(instance, x)?;
            best = std::mem::replace(&mut best, SparseSolution::zero(instance)).keep_better(cand);
            Ok(())
        })?;
    }
    Ok(best)
}

/// Single-row instances: a relaxed optimum with at most one fractional
/// entry already respects the sparsity budget, so no search is needed.
pub fn solve_m1_fast(instance: &ProblemInstance) -> Result<SparseSolution> {
    if instance.m() != 1 {
        return Err(Error::InvalidArgument(format!(
            "single-row path needs m = 1, got m = {}",
            instance.m()
        )));
    }
    let (relaxation, _) = relax(instance, 1e-9, DEFAULT_MAX_ITERS)?;
    let reduced = reduce_to_few_fractionals(instance, &relaxation.x_bar)?;
    let (frac, z): (Vec<usize>, Vec<i64>) = {
        let mut frac = Vec::new();
        let mut z = vec![0; instance.n()];
        for (j, &v) in reduced.iter().enumerate() {
            if v > 0.0 && v < instance.upper(j) as f64 {
                frac.push(j);
            } else {
                z[j] = v.round() as i64;
            }
        }
        (frac, z)
    };
    if frac.len() > 1 {
        return Err(Error::TooManyFractional {
            found: frac.len(),
            allowed: 1,
        });
    }
    // the fractional entry is re-optimized exactly against the integral part
    extend(instance, &z, &frac)
}
