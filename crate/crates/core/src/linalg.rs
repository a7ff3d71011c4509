//! Householder QR with column-norm pivoting, used for every least-squares
//! solve and rank check in the estimators.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance on `|R_jj| / |R_00|` below which a column is treated
/// as linearly dependent on the ones already factored.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Upper triangle holds R (pivoted column order).
    r: DMatrix<f64>,
    /// Householder vectors, one per factored column, acting on rows `j..`.
    reflectors: Vec<DVector<f64>>,
    /// `perm[j]` is the original index of the column in pivot position `j`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        Self::with_tolerance(a, RANK_TOL)
    }

    pub fn with_tolerance(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (n, k) = a.shape();
        let mut r = a.clone();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut reflectors = Vec::with_capacity(k.min(n));
        let steps = k.min(n);
        let mut rank = steps;
        let mut lead = 0.0_f64;

        for j in 0..steps {
            let (best, best_norm) = (j..k)
                .map(|c| (c, r.view((j, c), (n - j, 1)).norm()))
                .fold((j, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best != j {
                r.swap_columns(j, best);
                perm.swap(j, best);
            }
            if j == 0 {
                lead = best_norm;
            }
            if best_norm <= rel_tol * lead || best_norm == 0.0 {
                rank = j;
                break;
            }

            let x: DVector<f64> = r.view((j, j), (n - j, 1)).column(0).into_owned();
            let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
            let mut v = x;
            v[0] -= alpha;
            let vnorm = v.norm();
            if vnorm > 0.0 {
                v /= vnorm;
                let mut block = r.view_mut((j, j), (n - j, k - j));
                let proj = v.transpose() * &block;
                block -= 2.0 * &v * proj;
            }
            for i in j + 1..n {
                r[(i, j)] = 0.0;
            }
            r[(j, j)] = alpha;
            reflectors.push(v);
        }

        Self {
            r,
            reflectors,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.perm.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.ncols()
    }

    /// Original indices of the columns left out of the leading full-rank
    /// block, sorted ascending.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// `Qᵀ b`.
    fn qt_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        for (j, v) in self.reflectors.iter().enumerate() {
            let mut tail = out.rows_mut(j, v.len());
            let d = v.dot(&tail);
            tail.axpy(-2.0 * d, v, 1.0);
        }
        out
    }

    /// Least-squares solution in the original column order. Requires full rank.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert!(self.is_full_rank(), "solve on rank-deficient factorization");
        let k = self.ncols();
        let qtb = self.qt_mul(b);
        let mut z = DVector::zeros(k);
        for i in (0..k).rev() {
            let mut s = qtb[i];
            for j in i + 1..k {
                s -= self.r[(i, j)] * z[j];
            }
            z[i] = s / self.r[(i, i)];
        }
        let mut x = DVector::zeros(k);
        for (pos, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[pos];
        }
        x
    }

    /// `(AᵀA)⁻¹` in the original column order. Requires full rank.
    pub fn inverse_gram(&self) -> DMatrix<f64> {
        assert!(self.is_full_rank(), "inverse_gram on rank-deficient factorization");
        let k = self.ncols();
        // R⁻¹ by back substitution, column by column.
        let mut rinv = DMatrix::zeros(k, k);
        for c in 0..k {
            for i in (0..=c).rev() {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for j in i + 1..=c {
                    s -= self.r[(i, j)] * rinv[(j, c)];
                }
                rinv[(i, c)] = s / self.r[(i, i)];
            }
        }
        let pivoted = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(k, k);
        for (a, &oa) in self.perm.iter().enumerate() {
            for (b, &ob) in self.perm.iter().enumerate() {
                out[(oa, ob)] = pivoted[(a, b)];
            }
        }
        out
    }
}

/// Symmetric part of a square matrix.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_overdetermined_system() {
        // independent normal-equations solve (numpy): [0.5, 41/30, 19/30]
        let x1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x2 = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let a = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => x1[i],
            _ => x2[i],
        });
        let y = DVector::from_row_slice(&[3.1, 3.9, 7.2, 7.8, 11.1, 11.9]);
        let qr = PivotedQr::new(&a);
        assert_eq!(qr.rank(), 3);
        let b = qr.solve(&y);
        for (got, want) in b.iter().zip([0.5, 41.0 / 30.0, 19.0 / 30.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let direct = (a.transpose() * &a).try_inverse().unwrap();
        assert!((qr.inverse_gram() - direct).abs().max() < 1e-10);
    }

    #[test]
    fn detects_collinear_column() {
        let a = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 3.0,
        });
        let qr = PivotedQr::new(&a);
        assert_eq!(qr.rank(), 2);
        assert_eq!(qr.dependent_columns().len(), 1);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let qr = PivotedQr::new(&DMatrix::zeros(4, 2));
        assert_eq!(qr.rank(), 0);
        assert_eq!(qr.dependent_columns(), vec![0, 1]);
    }
}
