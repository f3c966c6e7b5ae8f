//! Small banded solvers.

use crate::error::{MfviError, Result};

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[k]` couples row `k+1` to column `k`, `upper[k]` couples row `k` to
/// column `k+1`. On return `rhs` holds the solution.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    debug_assert!(lower.len() + 1 == n && upper.len() + 1 == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta.abs() < f64::MIN_POSITIVE || !beta.is_finite() {
        return Err(MfviError::TridiagonalSingular { row: 0 });
    }
    rhs[0] /= beta;
    for k in 1..n {
        c[k - 1] = upper[k - 1] / beta;
        beta = diag[k] - lower[k - 1] * c[k - 1];
        if beta.abs() < f64::MIN_POSITIVE || !beta.is_finite() {
            return Err(MfviError::TridiagonalSingular { row: k });
        }
        rhs[k] = (rhs[k] - lower[k - 1] * rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c[k] * rhs[k + 1];
    }
    Ok(())
}

/// Symmetric positive-definite matrix with bandwidth two, stored by diagonals.
#[derive(Debug, Clone)]
pub struct SymPentadiagonal {
    pub diag: Vec<f64>,
    /// `(k, k+1)` entries.
    pub off1: Vec<f64>,
    /// `(k, k+2)` entries.
    pub off2: Vec<f64>,
}

impl SymPentadiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off1: vec![0.0; n.saturating_sub(1)],
            off2: vec![0.0; n.saturating_sub(2)],
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        match hi - lo {
            0 => self.diag[lo],
            1 => self.off1[lo],
            2 => self.off2[lo],
            _ => 0.0,
        }
    }

    /// Solves `self · x = rhs` by an `LDLᵀ` factorization; `None` if the matrix
    /// is not positive definite.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.diag.len();
        // l[i][t] = L(i, i-1-t) for t in 0..2
        let mut l = vec![[0.0f64; 2]; n];
        let mut d = vec![0.0; n];
        for j in 0..n {
            let mut dj = self.diag[j];
            for k in j.saturating_sub(2)..j {
                let ljk = l[j][j - 1 - k];
                dj -= ljk * ljk * d[k];
            }
            if !(dj > 0.0) || !dj.is_finite() {
                return None;
            }
            d[j] = dj;
            for i in j + 1..(j + 3).min(n) {
                let mut v = self.at(i, j);
                for k in i.saturating_sub(2)..j {
                    v -= l[i][i - 1 - k] * l[j][j - 1 - k] * d[k];
                }
                l[i][i - 1 - j] = v / dj;
            }
        }
        let mut x = rhs.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(2)..i {
                x[i] -= l[i][i - 1 - k] * x[k];
            }
        }
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n).rev() {
            for k in i + 1..(i + 3).min(n) {
                x[i] -= l[k][k - 1 - i] * x[k];
            }
        }
        Some(x)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                (i.saturating_sub(2)..(i + 3).min(n))
                    .map(|j| self.at(i, j) * x[j])
                    .sum()
            })
            .collect()
    }
}
