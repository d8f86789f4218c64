//! Exact rational arithmetic helpers.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

pub type Rational = BigRational;

/// Exact rational value of a finite double.
pub fn to_rational(v: f64) -> Rational {
    Rational::from_float(v).expect("finite value")
}

pub fn from_int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// Nearest double.
pub fn to_f64(v: &Rational) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// `A x` over the rationals.
pub fn apply(rows: impl Iterator<Item = Vec<i64>>, x: &[Rational]) -> Vec<Rational> {
    rows.map(|row| {
        row.iter()
            .zip(x)
            .filter(|(a, _)| **a != 0)
            .fold(Rational::zero(), |acc, (a, v)| acc + v * from_int(*a))
    })
    .collect()
}

/// A nonzero vector `d` with `sum_j d_j * columns[j] = 0`, or `None` when the
/// columns are linearly independent. Gaussian elimination over the rationals.
pub fn kernel_vector(columns: &[Vec<i64>]) -> Option<Vec<Rational>> {
    let k = columns.len();
    if k == 0 {
        return None;
    }
    let rows = columns[0].len();
    // row-major working copy
    let mut mat: Vec<Vec<Rational>> = (0..rows)
        .map(|i| columns.iter().map(|c| from_int(c[i])).collect())
        .collect();

    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..k {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !mat[i][c].is_zero()) else {
            continue;
        };
        mat.swap(r, p);
        let inv = mat[r][c].recip();
        for v in mat[r].iter_mut().skip(c) {
            *v = &*v * &inv;
        }
        for i in 0..rows {
            if i != r && !mat[i][c].is_zero() {
                let f = mat[i][c].clone();
                for j in c..k {
                    let delta = &f * &mat[r][j];
                    mat[i][j] -= delta;
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }

    let free = (0..k).find(|c| !pivot_cols.contains(c))?;
    let mut d = vec![Rational::zero(); k];
    d[free] = Rational::from_integer(BigInt::from(1));
    for (row, &pc) in pivot_cols.iter().enumerate() {
        d[pc] = -mat[row][free].clone();
    }
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_of_dependent_columns() {
        let cols = vec![vec![1, 2], vec![2, 4], vec![0, 1]];
        let d = kernel_vector(&cols).unwrap();
        for i in 0..2 {
            let s = cols
                .iter()
                .zip(&d)
                .fold(Rational::zero(), |acc, (c, dj)| acc + dj * from_int(c[i]));
            assert!(s.is_zero());
        }
        assert!(d.iter().any(|v| !v.is_zero()));
    }

    #[test]
    fn independent_columns_have_trivial_kernel() {
        assert!(kernel_vector(&[vec![1, 0], vec![0, 1]]).is_none());
        assert!(kernel_vector(&[vec![3, 1]]).is_none());
    }

    #[test]
    fn zero_column_is_kernel() {
        let d = kernel_vector(&[vec![0, 0]]).unwrap();
        assert_eq!(d, vec![from_int(1)]);
    }

    #[test]
    fn float_round_trip_is_exact() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(to_f64(&to_rational(v)), v);
        }
    }
}
