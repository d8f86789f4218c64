//! Bounded integer feasibility `A y = b*`, `||y||_0 <= budget`,
//! `y in {0..u}^k` by dynamic programming over partial sums.
//!
//! Two entry points:
//! - [`solve_feasibility`] answers one query column by column with
//!   memoized depth-first search and returns the lexicographically smallest
//!   witness.
//! - [`reachable_sums`] works on groups of identical columns and computes
//!   every reachable sum inside a box at once, which is what the solver
//!   needs when it sweeps all candidate right-hand sides.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::proximity::CandidateBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityQuery {
    /// Columns of the reduced matrix, each of length `m`.
    pub columns: Vec<Vec<i64>>,
    pub target: Vec<i64>,
    /// Maximum number of nonzero entries of `y`. Negative means infeasible.
    pub budget: i64,
    /// Per-column upper bounds; `None` means `y` is 0/1.
    pub upper: Option<Vec<i64>>,
}

impl FeasibilityQuery {
    pub fn binary(columns: Vec<Vec<i64>>, target: Vec<i64>, budget: i64) -> Self {
        Self {
            columns,
            target,
            budget,
            upper: None,
        }
    }

    fn upper(&self, j: usize) -> i64 {
        self.upper.as_ref().map_or(1, |u| u[j])
    }

    /// Checks a witness in integer arithmetic.
    pub fn verify(&self, y: &[i64]) -> bool {
        if y.len() != self.columns.len() {
            return false;
        }
        if y.iter().enumerate().any(|(j, &v)| v < 0 || v > self.upper(j)) {
            return false;
        }
        if y.iter().filter(|&&v| v != 0).count() as i64 > self.budget {
            return false;
        }
        (0..self.target.len()).all(|i| {
            self.columns
                .iter()
                .zip(y)
                .map(|(c, &v)| c[i] * v)
                .sum::<i64>()
                == self.target[i]
        })
    }
}

struct Search<'a> {
    q: &'a FeasibilityQuery,
    /// `suffix_lo[j][i]`: smallest reachable contribution of columns `j..` to row `i`.
    suffix_lo: Vec<Vec<i64>>,
    suffix_hi: Vec<Vec<i64>>,
    dead: Vec<HashSet<(i64, Vec<i64>)>>,
    states: usize,
    witness: Vec<i64>,
}

impl<'a> Search<'a> {
    fn new(q: &'a FeasibilityQuery) -> Self {
        let k = q.columns.len();
        let m = q.target.len();
        let mut suffix_lo = vec![vec![0; m]; k + 1];
        let mut suffix_hi = vec![vec![0; m]; k + 1];
        for j in (0..k).rev() {
            let ub = q.upper(j);
            for i in 0..m {
                let v = q.columns[j][i] * ub;
                suffix_lo[j][i] = suffix_lo[j + 1][i] + v.min(0);
                suffix_hi[j][i] = suffix_hi[j + 1][i] + v.max(0);
            }
        }
        Self {
            q,
            suffix_lo,
            suffix_hi,
            dead: vec![HashSet::new(); k + 1],
            states: 0,
            witness: vec![0; k],
        }
    }

    fn can_reach(&self, j: usize, sum: &[i64]) -> bool {
        (0..sum.len()).all(|i| {
            let need = self.q.target[i] - sum[i];
            self.suffix_lo[j][i] <= need && need <= self.suffix_hi[j][i]
        })
    }

    fn visit(&mut self, j: usize, used: i64, sum: Vec<i64>) -> bool {
        let key = (used, sum);
        if self.dead[j].contains(&key) {
            return false;
        }
        let (used, sum) = key;
        self.states += 1;
        if j == self.q.columns.len() {
            if sum == self.q.target {
                return true;
            }
            self.dead[j].insert((used, sum));
            return false;
        }
        // exclude first, then increasing values
        for v in 0..=self.q.upper(j) {
            if v > 0 && used >= self.q.budget {
                break;
            }
            let next: Vec<i64> = sum
                .iter()
                .zip(&self.q.columns[j])
                .map(|(s, a)| s + a * v)
                .collect();
            if !self.can_reach(j + 1, &next) {
                continue;
            }
            if self.visit(j + 1, used + i64::from(v > 0), next) {
                self.witness[j] = v;
                return true;
            }
        }
        self.dead[j].insert((used, sum));
        false
    }
}

/// Solves the query and reports the number of DP states visited.
pub fn solve_feasibility_counted(query: &FeasibilityQuery) -> (Option<Vec<i64>>, usize) {
    if query.budget < 0 {
        return (None, 0);
    }
    let mut search = Search::new(query);
    let m = query.target.len();
    if !search.can_reach(0, &vec![0; m]) {
        return (None, 1);
    }
    let found = search.visit(0, 0, vec![0; m]);
    let states = search.states;
    (found.then_some(search.witness), states)
}

/// Lexicographically smallest `y` with `A y = target` and at most `budget`
/// nonzeros, or `None` when there is none.
pub fn solve_feasibility(query: &FeasibilityQuery) -> Option<Vec<i64>> {
    solve_feasibility_counted(query).0
}

/// Number of memoized states a solve of `query` visits.
pub fn count_states(query: &FeasibilityQuery) -> usize {
    solve_feasibility_counted(query).1
}

/// A set of interchangeable columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub column: Vec<i64>,
    pub upper: i64,
    pub multiplicity: usize,
}

/// How a group contributes to a reachable sum: `copies` of its columns are
/// nonzero and together carry `total` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupChoice {
    pub copies: usize,
    pub total: i64,
}

#[derive(Debug, Clone)]
struct Entry {
    used: usize,
    prev: Option<Vec<i64>>,
    choice: GroupChoice,
}

/// Every sum `sum_g total_g * column_g` inside a box reachable with at most
/// `budget` nonzero columns, each with the fewest columns possible.
#[derive(Debug, Clone)]
pub struct ReachableSums {
    layers: Vec<BTreeMap<Vec<i64>, Entry>>,
    bx: CandidateBox,
    states: usize,
}

/// Forward DP over column groups. A state is a partial sum that keeps the
/// smallest column count reaching it; states that can no longer reach the
/// box are pruned.
pub fn reachable_sums(groups: &[ColumnGroup], budget: usize, bx: &CandidateBox) -> ReachableSums {
    let m = bx.dim();
    let g = groups.len();
    let mut suffix_lo = vec![vec![0i64; m]; g + 1];
    let mut suffix_hi = vec![vec![0i64; m]; g + 1];
    for t in (0..g).rev() {
        let grp = &groups[t];
        let scale = grp.upper * grp.multiplicity as i64;
        for i in 0..m {
            let v = grp.column[i] * scale;
            suffix_lo[t][i] = suffix_lo[t + 1][i] + v.min(0);
            suffix_hi[t][i] = suffix_hi[t + 1][i] + v.max(0);
        }
    }
    let viable = |t: usize, s: &[i64]| {
        (0..m).all(|i| {
            s[i] + suffix_hi[t][i] >= bx.lower[i] && s[i] + suffix_lo[t][i] <= bx.upper[i]
        })
    };

    let mut layers: Vec<BTreeMap<Vec<i64>, Entry>> = Vec::with_capacity(g + 1);
    let mut first = BTreeMap::new();
    if !bx.is_empty() && viable(0, &vec![0; m]) {
        first.insert(
            vec![0; m],
            Entry {
                used: 0,
                prev: None,
                choice: GroupChoice {
                    copies: 0,
                    total: 0,
                },
            },
        );
    }
    let mut states = first.len();
    layers.push(first);

    for (t, grp) in groups.iter().enumerate() {
        let mut next: BTreeMap<Vec<i64>, Entry> = BTreeMap::new();
        for (sum, entry) in &layers[t] {
            let max_copies = grp.multiplicity.min(budget - entry.used);
            for copies in 0..=max_copies {
                let (lo, hi) = if copies == 0 {
                    (0, 0)
                } else {
                    (copies as i64, copies as i64 * grp.upper)
                };
                for total in lo..=hi {
                    let s: Vec<i64> = sum
                        .iter()
                        .zip(&grp.column)
                        .map(|(a, c)| a + c * total)
                        .collect();
                    if !viable(t + 1, &s) {
                        continue;
                    }
                    let used = entry.used + copies;
                    let better = next.get(&s).is_none_or(|e| used < e.used);
                    if better {
                        next.insert(
                            s,
                            Entry {
                                used,
                                prev: Some(sum.clone()),
                                choice: GroupChoice { copies, total },
                            },
                        );
                    }
                }
            }
        }
        states += next.len();
        layers.push(next);
    }
    ReachableSums {
        layers,
        bx: bx.clone(),
        states,
    }
}

impl ReachableSums {
    /// Reachable sums inside the box, in lexicographic order, with the
    /// number of nonzero columns used.
    pub fn targets(&self) -> impl Iterator<Item = (&[i64], usize)> + '_ {
        self.layers
            .last()
            .into_iter()
            .flat_map(|l| l.iter())
            .filter(|(s, _)| self.bx.contains(s))
            .map(|(s, e)| (s.as_slice(), e.used))
    }

    /// Total number of DP states kept across layers.
    pub fn states(&self) -> usize {
        self.states
    }

    /// Per-group choices realizing `target`.
    pub fn witness(&self, target: &[i64]) -> Option<Vec<GroupChoice>> {
        let g = self.layers.len() - 1;
        let mut out = vec![
            GroupChoice {
                copies: 0,
                total: 0
            };
            g
        ];
        let mut key = target.to_vec();
        for t in (1..=g).rev() {
            let e = self.layers[t].get(&key)?;
            out[t - 1] = e.choice;
            key = e.prev.clone()?;
        }
        Some(out)
    }
}

/// Splits `total` units over `copies` columns with bound `upper` each, as
/// evenly as possible (larger shares first).
pub fn distribute(choice: GroupChoice, upper: i64) -> Vec<i64> {
    if choice.copies == 0 {
        return Vec::new();
    }
    let c = choice.copies as i64;
    let base = choice.total / c;
    let extra = choice.total % c;
    let out: Vec<i64> = (0..c).map(|i| base + i64::from(i < extra)).collect();
    debug_assert!(out.iter().all(|&v| v >= 1 && v <= upper));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(q: &FeasibilityQuery) -> Option<Vec<i64>> {
        let k = q.columns.len();
        (0u32..1 << k)
            .map(|mask| (0..k).map(|j| i64::from(mask >> (k - 1 - j) & 1 == 1)).collect::<Vec<_>>())
            .find(|y| q.verify(y))
    }

    #[test]
    fn zero_target() {
        let q = FeasibilityQuery::binary(vec![vec![1, 2], vec![3, -1]], vec![0, 0], 2);
        assert_eq!(solve_feasibility(&q), Some(vec![0, 0]));
    }

    #[test]
    fn small_examples() {
        let cols = vec![vec![2], vec![3], vec![5]];
        let q = FeasibilityQuery::binary(cols.clone(), vec![8], 2);
        assert_eq!(solve_feasibility(&q), Some(vec![0, 1, 1]));
        assert_eq!(brute(&q), Some(vec![0, 1, 1]));
        let q = FeasibilityQuery::binary(cols, vec![8], 1);
        assert_eq!(solve_feasibility(&q), None);
        assert_eq!(brute(&q), None);
    }

    #[test]
    fn state_counts() {
        let q = FeasibilityQuery::binary(vec![], vec![0], 0);
        assert_eq!(solve_feasibility_counted(&q), (Some(vec![]), 1));
        let q = FeasibilityQuery::binary(vec![], vec![2], 0);
        assert_eq!(solve_feasibility_counted(&q), (None, 1));
        let q = FeasibilityQuery::binary(vec![vec![3]], vec![3], 1);
        let (w, states) = solve_feasibility_counted(&q);
        assert_eq!(w, Some(vec![1]));
        assert!(states <= 4, "{states}");
    }

    #[test]
    fn negative_budget_is_infeasible() {
        let q = FeasibilityQuery::binary(vec![vec![1]], vec![0], -1);
        assert_eq!(solve_feasibility_counted(&q), (None, 0));
    }

    #[test]
    fn bounded_variables_count_support_not_mass() {
        // y_1 = 3 uses one support slot
        let q = FeasibilityQuery {
            columns: vec![vec![1], vec![1]],
            target: vec![3],
            budget: 1,
            upper: Some(vec![3, 3]),
        };
        assert_eq!(solve_feasibility(&q), Some(vec![0, 3]));
        let q = FeasibilityQuery {
            upper: Some(vec![2, 2]),
            ..q
        };
        assert_eq!(solve_feasibility(&q), None);
    }

    #[test]
    fn lexicographically_smallest_witness() {
        let q = FeasibilityQuery::binary(vec![vec![1], vec![1], vec![1]], vec![1], 1);
        assert_eq!(solve_feasibility(&q), Some(vec![0, 0, 1]));
    }

    #[test]
    fn grouped_reachable_sums() {
        let groups = vec![
            ColumnGroup {
                column: vec![1, 0],
                upper: 1,
                multiplicity: 2,
            },
            ColumnGroup {
                column: vec![0, 1],
                upper: 1,
                multiplicity: 1,
            },
        ];
        let bx = CandidateBox {
            lower: vec![0, 0],
            upper: vec![2, 1],
        };
        let r = reachable_sums(&groups, 2, &bx);
        let t: Vec<_> = r.targets().map(|(s, c)| (s.to_vec(), c)).collect();
        assert_eq!(
            t,
            vec![
                (vec![0, 0], 0),
                (vec![0, 1], 1),
                (vec![1, 0], 1),
                (vec![1, 1], 2),
                (vec![2, 0], 2)
            ]
        );
        let w = r.witness(&[1, 1]).unwrap();
        assert_eq!(w[0].copies, 1);
        assert_eq!(w[1].copies, 1);
    }

    #[test]
    fn distribute_even_split() {
        assert_eq!(
            distribute(
                GroupChoice {
                    copies: 3,
                    total: 7
                },
                3
            ),
            vec![3, 2, 2]
        );
    }
}
