//! Small dense symmetric solves for weighted least squares normal equations.
//!
//! The Gram matrix is equilibrated to unit diagonal and factored by a
//! diagonally pivoted Cholesky decomposition. Pivots are searched only inside
//! the current column group, so when a factorization fails the group index
//! identifies which block of a stacked design is collinear with the blocks
//! before it.

use alloc::vec;
use alloc::vec::Vec;

/// Relative pivot tolerance on the equilibrated Gram matrix.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Dense symmetric matrix with full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Adds `weight * row row'` to the upper triangle. Call
    /// [`SymMatrix::symmetrize`] after the last update.
    #[inline]
    pub fn add_outer_upper(&mut self, weight: f64, row: &[f64]) {
        let n = self.dim;
        for i in 0..n {
            let wi = weight * row[i];
            if wi == 0.0 {
                continue;
            }
            let base = i * n;
            for j in i..n {
                self.data[base + j] += wi * row[j];
            }
        }
    }

    /// Copies the upper triangle into the lower triangle.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }
}

/// Position at which a pivoted factorization stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankFailure {
    /// Index of the column group whose pivot search failed.
    pub group: usize,
    /// Original column index of the best (still too small) candidate.
    pub column: usize,
}

/// Pivoted Cholesky factor `P' S A S P = L L'` of an equilibrated symmetric
/// positive definite matrix.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    dim: usize,
    lower: Vec<f64>,
    perm: Vec<usize>,
    scale: Vec<f64>,
}

impl PivotedCholesky {
    /// Factors `a` treating all columns as one group.
    pub fn factor(a: &SymMatrix) -> Result<Self, RankFailure> {
        Self::factor_grouped(a, &[a.dim()])
    }

    /// Factors `a` with pivoting restricted to column groups.
    ///
    /// `group_ends` holds the exclusive end index of each group, in
    /// increasing order, the last equal to `a.dim()`.
    pub fn factor_grouped(a: &SymMatrix, group_ends: &[usize]) -> Result<Self, RankFailure> {
        let n = a.dim();
        debug_assert_eq!(group_ends.last().copied().unwrap_or(0), n);

        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = a.get(i, i);
                if d > 0.0 && d.is_finite() {
                    1.0 / libm::sqrt(d)
                } else {
                    0.0
                }
            })
            .collect();

        let mut work = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                work[i * n + j] = scale[i] * a.get(i, j) * scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut lower = vec![0.0; n * n];

        let mut group = 0;
        for k in 0..n {
            while group_ends[group] <= k {
                group += 1;
            }
            let end = group_ends[group];

            let mut best = k;
            let mut best_val = work[k * n + k];
            for j in (k + 1)..end {
                let v = work[j * n + j];
                if v > best_val {
                    best = j;
                    best_val = v;
                }
            }
            if !(best_val > PIVOT_TOLERANCE) {
                return Err(RankFailure { group, column: perm[best] });
            }
            if best != k {
                swap_symmetric(&mut work, n, k, best);
                perm.swap(k, best);
                for c in 0..k {
                    lower.swap(k * n + c, best * n + c);
                }
            }

            let pivot = libm::sqrt(work[k * n + k]);
            lower[k * n + k] = pivot;
            for i in (k + 1)..n {
                lower[i * n + k] = work[i * n + k] / pivot;
            }
            for i in (k + 1)..n {
                let lik = lower[i * n + k];
                if lik == 0.0 {
                    continue;
                }
                for j in (k + 1)..=i {
                    let v = work[i * n + j] - lik * lower[j * n + k];
                    work[i * n + j] = v;
                    work[j * n + i] = v;
                }
            }
        }

        Ok(Self { dim: n, lower, perm, scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut z: Vec<f64> = (0..n).map(|k| self.scale[self.perm[k]] * b[self.perm[k]]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * z[k];
            }
            z[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * z[k];
            }
            z[i] = s / self.lower[i * n + i];
        }
        let mut x = vec![0.0; n];
        for k in 0..n {
            let col = self.perm[k];
            x[col] = self.scale[col] * z[k];
        }
        x
    }

    /// Row `k` of `A^{-1}` (equal to its column, by symmetry).
    pub fn inverse_row(&self, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        e[k] = 1.0;
        self.solve(&e)
    }

    /// Quadratic form `v' A^{-1} v`.
    pub fn inverse_quadratic_form(&self, v: &[f64]) -> f64 {
        let x = self.solve(v);
        x.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

fn swap_symmetric(m: &mut [f64], n: usize, a: usize, b: usize) {
    for c in 0..n {
        m.swap(a * n + c, b * n + c);
    }
    for r in 0..n {
        m.swap(r * n + a, r * n + b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        let mut m = SymMatrix::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..n {
                m.data[i * n + j] = r[j];
            }
        }
        m
    }

    #[test]
    fn solves_spd_system() {
        let a = from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let chol = PivotedCholesky::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = chol.solve(&b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a.get(i, j) * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn badly_scaled_columns() {
        let a = from_rows(&[&[1e-8, 1e-3], &[1e-3, 1e4]]);
        let chol = PivotedCholesky::factor(&a).unwrap();
        let x = chol.solve(&[1.0, 1.0]);
        let r0 = 1e-8 * x[0] + 1e-3 * x[1];
        let r1 = 1e-3 * x[0] + 1e4 * x[1];
        assert!((r0 - 1.0).abs() < 1e-9 && (r1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_collinear_group() {
        // third column = first + second
        let cols = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0], [2.0, -1.0, 1.0]];
        let mut a = SymMatrix::zeros(3);
        for r in &cols {
            a.add_outer_upper(1.0, r);
        }
        a.symmetrize();
        let err = PivotedCholesky::factor_grouped(&a, &[2, 3]).unwrap_err();
        assert_eq!(err.group, 1);
        assert_eq!(err.column, 2);
    }

    #[test]
    fn zero_column_fails() {
        let a = from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let err = PivotedCholesky::factor_grouped(&a, &[1, 2]).unwrap_err();
        assert_eq!(err, RankFailure { group: 1, column: 1 });
    }
}
