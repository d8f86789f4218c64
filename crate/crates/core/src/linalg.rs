//! Dense least squares for the tiny systems that show up here (a handful of
//! columns). Householder QR with column pivoting, then a null-space
//! projection to get the minimum-norm solution on rank deficiency.

/// Relative threshold on `|R_ii| / |R_00|` below which a column is treated
/// as dependent.
const RANK_TOL: f64 = 1e-10;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column {j} has wrong length");
            m.data[j * rows..(j + 1) * rows].copy_from_slice(c);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * xj;
            }
        }
        out
    }
}

/// Precomputed minimum-norm least-squares solver: `solve(rhs)` returns the
/// minimum-norm minimizer of `||M g - rhs||_2`.
#[derive(Debug, Clone)]
pub struct MinNormSolver {
    /// `cols x rows`, row-major: the pseudo-inverse.
    pinv: Vec<f64>,
    rows: usize,
    cols: usize,
    rank: usize,
}

impl MinNormSolver {
    pub fn new(mat: &Matrix) -> Self {
        let (rows, cols) = (mat.rows(), mat.cols());
        let qr = PivotedQr::new(mat);
        let mut pinv = vec![0.0; cols * rows];
        let mut e = vec![0.0; rows];
        for i in 0..rows {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            let g = qr.min_norm_solve(&e);
            for (j, gj) in g.into_iter().enumerate() {
                pinv[j * rows + i] = gj;
            }
        }
        Self {
            pinv,
            rows,
            cols,
            rank: qr.rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.rows);
        (0..self.cols)
            .map(|j| {
                self.pinv[j * self.rows..(j + 1) * self.rows]
                    .iter()
                    .zip(rhs)
                    .map(|(p, r)| p * r)
                    .sum()
            })
            .collect()
    }
}

/// One-shot minimum-norm least squares.
pub fn min_norm_lstsq(mat: &Matrix, rhs: &[f64]) -> Vec<f64> {
    PivotedQr::new(mat).min_norm_solve(rhs)
}

struct PivotedQr {
    rows: usize,
    cols: usize,
    /// Householder vectors below the diagonal, R on and above; column-major.
    qr: Matrix,
    /// Householder scalars.
    tau: Vec<f64>,
    /// `perm[k]` is the original column at position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    fn new(mat: &Matrix) -> Self {
        let (rows, cols) = (mat.rows(), mat.cols());
        let mut qr = mat.clone();
        let mut perm: Vec<usize> = (0..cols).collect();
        let steps = rows.min(cols);
        let mut tau = vec![0.0; steps];
        let mut norms: Vec<f64> = (0..cols)
            .map(|j| qr.column(j).iter().map(|v| v * v).sum())
            .collect();

        for k in 0..steps {
            // pivot: remaining column with largest norm
            let (p, _) = (k..cols)
                .map(|j| (j, norms[j]))
                .fold((k, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
            if p != k {
                for i in 0..rows {
                    let t = qr.get(i, k);
                    qr.set(i, k, qr.get(i, p));
                    qr.set(i, p, t);
                }
                norms.swap(k, p);
                perm.swap(k, p);
            }

            let alpha: f64 = (k..rows).map(|i| qr.get(i, k).powi(2)).sum::<f64>().sqrt();
            if alpha == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            let x0 = qr.get(k, k);
            let beta = if x0 >= 0.0 { -alpha } else { alpha };
            let v0 = x0 - beta;
            for i in k + 1..rows {
                qr.set(i, k, qr.get(i, k) / v0);
            }
            tau[k] = (beta - x0) / beta;
            qr.set(k, k, beta);

            for j in k + 1..cols {
                let mut s = qr.get(k, j);
                for i in k + 1..rows {
                    s += qr.get(i, k) * qr.get(i, j);
                }
                s *= tau[k];
                qr.set(k, j, qr.get(k, j) - s);
                for i in k + 1..rows {
                    qr.set(i, j, qr.get(i, j) - s * qr.get(i, k));
                }
                norms[j] = (k + 1..rows).map(|i| qr.get(i, j).powi(2)).sum();
            }
        }

        let r00 = if steps > 0 { qr.get(0, 0).abs() } else { 0.0 };
        let rank = if r00 == 0.0 {
            0
        } else {
            (0..steps)
                .take_while(|&k| qr.get(k, k).abs() > RANK_TOL * r00)
                .count()
        };
        Self {
            rows,
            cols,
            qr,
            tau,
            perm,
            rank,
        }
    }

    /// `Q^T v`.
    fn apply_qt(&self, v: &mut [f64]) {
        for k in 0..self.tau.len() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = v[k];
            for i in k + 1..self.rows {
                s += self.qr.get(i, k) * v[i];
            }
            s *= self.tau[k];
            v[k] -= s;
            for i in k + 1..self.rows {
                v[i] -= s * self.qr.get(i, k);
            }
        }
    }

    /// Solves `R11 y = c` for the leading `rank x rank` block.
    fn back_substitute(&self, c: &[f64]) -> Vec<f64> {
        let r = self.rank;
        let mut y = vec![0.0; r];
        for i in (0..r).rev() {
            let mut s = c[i];
            for j in i + 1..r {
                s -= self.qr.get(i, j) * y[j];
            }
            y[i] = s / self.qr.get(i, i);
        }
        y
    }

    fn min_norm_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let r = self.rank;
        let mut out = vec![0.0; self.cols];
        if r == 0 {
            return out;
        }
        let mut c = rhs.to_vec();
        self.apply_qt(&mut c);
        let y = self.back_substitute(&c[..r]);

        // basic solution in pivoted coordinates
        let mut xp = vec![0.0; self.cols];
        xp[..r].copy_from_slice(&y);

        if r < self.cols {
            // null space basis in pivoted coordinates: [-R11^{-1} R12; I]
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.cols - r);
            for j in r..self.cols {
                let col: Vec<f64> = (0..r).map(|i| self.qr.get(i, j)).collect();
                let w = self.back_substitute(&col);
                let mut v = vec![0.0; self.cols];
                for i in 0..r {
                    v[i] = -w[i];
                }
                v[j] = 1.0;
                basis.push(v);
            }
            // orthonormalize (modified Gram-Schmidt, twice for stability)
            for _ in 0..2 {
                for a in 0..basis.len() {
                    for b in 0..a {
                        let d: f64 = basis[a].iter().zip(&basis[b]).map(|(p, q)| p * q).sum();
                        let (lo, hi) = basis.split_at_mut(a);
                        for (p, q) in hi[0].iter_mut().zip(&lo[b]) {
                            *p -= d * q;
                        }
                    }
                    let nrm: f64 = basis[a].iter().map(|v| v * v).sum::<f64>().sqrt();
                    basis[a].iter_mut().for_each(|v| *v /= nrm);
                }
            }
            for v in &basis {
                let d: f64 = v.iter().zip(&xp).map(|(p, q)| p * q).sum();
                for (x, q) in xp.iter_mut().zip(v) {
                    *x -= d * q;
                }
            }
        }

        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = xp[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn square_system() {
        let m = Matrix::from_columns(2, &[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = min_norm_lstsq(&m, &[3.0, 5.0]);
        assert!(close(&x, &[0.8, 1.4], 1e-12), "{x:?}");
    }

    #[test]
    fn overdetermined_projection() {
        let m = Matrix::from_columns(2, &[vec![1.0, 1.0]]);
        let x = min_norm_lstsq(&m, &[2.0, 2.0]);
        assert!(close(&x, &[2.0], 1e-12));
        let x = min_norm_lstsq(&m, &[1.0, 3.0]);
        assert!(close(&x, &[2.0], 1e-12));
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // g1 + 2 g2 = 5 -> minimum norm (1, 2)
        let m = Matrix::from_columns(1, &[vec![1.0], vec![2.0]]);
        let x = min_norm_lstsq(&m, &[5.0]);
        assert!(close(&x, &[1.0, 2.0], 1e-12), "{x:?}");
        // duplicated columns split evenly
        let m = Matrix::from_columns(2, &[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let x = min_norm_lstsq(&m, &[2.0, 2.0]);
        assert!(close(&x, &[1.0, 1.0], 1e-12), "{x:?}");
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let m = Matrix::zeros(3, 2);
        assert_eq!(min_norm_lstsq(&m, &[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
        let s = MinNormSolver::new(&m);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.solve(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn precomputed_matches_direct() {
        let m = Matrix::from_columns(
            3,
            &[vec![1.0, -2.0, 3.0], vec![0.0, 1.0, 1.0], vec![1.0, -1.0, 4.0]],
        );
        let s = MinNormSolver::new(&m);
        assert_eq!(s.rank(), 2);
        let rhs = [1.0, 0.5, -2.0];
        assert!(close(&s.solve(&rhs), &min_norm_lstsq(&m, &rhs), 1e-12));
    }
}
