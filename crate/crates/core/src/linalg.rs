//! Dense symmetric factorization helpers.
//!
//! Matrices are stored row-major in a flat `Vec<f64>`. The Cholesky factor is
//! kept as packed lower-triangular rows so that it can be extended one row at a
//! time when a sample is appended.

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry are treated as singular.
pub const RELATIVE_PIVOT_FLOOR: f64 = 1e-13;

/// Lower-triangular Cholesky factor stored as packed rows (row `i` has `i + 1` entries).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LowerFactor {
    rows: Vec<Vec<f64>>,
}

impl LowerFactor {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.rows[i][i]
    }

    /// Factorizes the symmetric matrix `a` (row-major, `n x n`) after adding
    /// `jitter` to the diagonal.
    pub fn factorize(a: &[f64], n: usize, jitter: f64, context: &str) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix shape mismatch");
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0_f64, f64::max);
        let floor = RELATIVE_PIVOT_FLOOR * max_diag.max(f64::MIN_POSITIVE);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![0.0; i + 1];
            for j in 0..i {
                let dot = dot(&row[..j], &rows[j][..j]);
                row[j] = (a[i * n + j] - dot) / rows[j][j];
            }
            let pivot = a[i * n + i] + jitter - dot(&row[..i], &row[..i]);
            if !(pivot > floor) {
                return Err(Error::NumericalFailure {
                    context: context.to_string(),
                    pivot: i,
                    value: pivot,
                    jitter,
                });
            }
            row[i] = pivot.sqrt();
            rows.push(row);
        }
        Ok(LowerFactor { rows })
    }

    /// Solves `L x = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.dim());
        for i in 0..b.len() {
            let row = &self.rows[i];
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Appends one row given the off-diagonal solution `l = L^{-1} c` and the new
    /// diagonal entry.
    pub fn push_row(&mut self, mut off_diag: Vec<f64>, diag: f64) {
        debug_assert_eq!(off_diag.len(), self.dim());
        off_diag.push(diag);
        self.rows.push(off_diag);
    }

    /// `log det(L L^T)`.
    pub fn log_det(&self) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| 2.0 * r[i].ln())
            .sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
