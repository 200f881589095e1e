//! Symmetric eigendecomposition helpers: Moore-Penrose solves, extremal
//! eigenvalues and condition numbers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

/// Relative eigenvalue cutoff for the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-12;

/// Gram matrices with a condition number above this are solved by
/// pseudo-inverse and flagged.
pub const COND_LIMIT: f64 = 1e12;

/// Eigen-summary and solution of a symmetric system.
#[derive(Debug, Clone)]
pub struct SymSolve {
    pub solution: DVector<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
    /// Number of eigenvalues zeroed by the cutoff.
    pub truncated: usize,
}

impl SymSolve {
    pub fn condition(&self) -> f64 {
        condition_from(self.min_eig, self.max_eig)
    }
}

fn condition_from(min_eig: f64, max_eig: f64) -> f64 {
    let hi = max_eig.abs().max(min_eig.abs());
    let lo = if min_eig.signum() == max_eig.signum() {
        min_eig.abs().min(max_eig.abs())
    } else {
        0.0
    };
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part of `a`.
pub fn sym_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(a))
}

/// Smallest and largest eigenvalue of the symmetric part of `a`.
pub fn eig_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = sym_eigen(a);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eig_extremes(a);
    condition_from(lo, hi)
}

/// `a⁻ b` with `a` symmetric, dropping eigenvalues below
/// `rcond * max|eig|` in magnitude.
pub fn sym_pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> SymSolve {
    let d = a.nrows();
    if d == 0 {
        return SymSolve {
            solution: DVector::zeros(0),
            min_eig: 0.0,
            max_eig: 0.0,
            truncated: 0,
        };
    }
    let eig = sym_eigen(a);
    let vals = &eig.eigenvalues;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rcond * scale;
    let coords = eig.eigenvectors.transpose() * b;
    let mut truncated = 0;
    let mut scaled = DVector::zeros(d);
    for i in 0..d {
        if vals[i].abs() > cutoff && scale > 0.0 {
            scaled[i] = coords[i] / vals[i];
        } else {
            truncated += 1;
        }
    }
    let min_eig = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    SymSolve {
        solution: &eig.eigenvectors * scaled,
        min_eig,
        max_eig,
        truncated,
    }
}

/// Moore-Penrose inverse of a symmetric matrix.
pub fn sym_pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let d = a.nrows();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = sym_eigen(a);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let inv = DVector::from_iterator(
        d,
        eig.eigenvalues.iter().map(|&v| {
            if scale > 0.0 && v.abs() > rcond * scale {
                1.0 / v
            } else {
                0.0
            }
        }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Rows per chunk in parallel reductions; fixed so sums do not depend on
/// the worker count.
pub const REDUCE_CHUNK: usize = 512;

/// Weighted cross-products `Σ w_i r_i r_i'` and `Σ v_i r_i` over rows of
/// `rows`, each divided by `denom`. Chunked so the reduction order is fixed.
pub fn weighted_moments(
    rows: &[Vec<f64>],
    weight: &[f64],
    target: &[f64],
    denom: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = rows
        .par_chunks(REDUCE_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut a = DMatrix::zeros(d, d);
            let mut b = DVector::zeros(d);
            for (off, r) in chunk.iter().enumerate() {
                let i = c * REDUCE_CHUNK + off;
                let w = weight[i];
                let v = target[i];
                for p in 0..d {
                    if r[p] == 0.0 {
                        continue;
                    }
                    let wp = w * r[p];
                    for q in p..d {
                        a[(p, q)] += wp * r[q];
                    }
                    b[p] += v * r[p];
                }
            }
            (a, b)
        })
        .collect();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for (pa, pb) in partials {
        a += pa;
        b += pb;
    }
    for p in 0..d {
        for q in 0..p {
            a[(p, q)] = a[(q, p)];
        }
    }
    (a / denom, b / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_matches_inverse_for_pd() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let sol = sym_pinv_solve(&a, &b, PINV_RCOND);
        let direct = a.clone().lu().solve(&b).unwrap();
        assert_relative_eq!(sol.solution, direct, epsilon = 1e-12);
        assert_eq!(sol.truncated, 0);
        assert!(sol.min_eig > 0.0);
    }

    #[test]
    fn pinv_of_singular_zeroes_null_space() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 5.0]);
        let sol = sym_pinv_solve(&a, &b, PINV_RCOND);
        assert_relative_eq!(sol.solution[0], 2.0);
        assert_eq!(sol.solution[1], 0.0);
        assert_eq!(sol.truncated, 1);
        assert!(sol.condition().is_infinite());
    }

    #[test]
    fn pinv_penrose_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p = sym_pinv(&a, PINV_RCOND);
        assert_relative_eq!(&a * &p * &a, a, epsilon = 1e-12);
        assert_relative_eq!(&p * &a * &p, p, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let sol = sym_pinv_solve(&a, &DVector::from_vec(vec![1.0, 1.0]), PINV_RCOND);
        assert_eq!(sol.truncated, 0);
        assert_relative_eq!(sol.solution[1], -0.5);
        assert!(sol.condition().is_infinite());
        assert_relative_eq!(condition_number(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])), 4.0);
    }

    #[test]
    fn moments_match_naive_sum() {
        let rows: Vec<Vec<f64>> = (0..1500).map(|i| vec![1.0, (i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let w: Vec<f64> = (0..1500).map(|i| 1.0 + (i % 7) as f64).collect();
        let t: Vec<f64> = (0..1500).map(|i| (i % 3) as f64).collect();
        let (a, b) = weighted_moments(&rows, &w, &t, 1500.0);
        let mut na = DMatrix::zeros(3, 3);
        let mut nb = DVector::zeros(3);
        for i in 0..1500 {
            let r = DVector::from_vec(rows[i].clone());
            na += &r * r.transpose() * w[i];
            nb += &r * t[i];
        }
        assert_relative_eq!(a, na / 1500.0, epsilon = 1e-10);
        assert_relative_eq!(b, nb / 1500.0, epsilon = 1e-10);
    }
}
