//! Tridiagonal kernels: matrix-vector products and an LU factorization
//! without pivoting (all systems solved here are diagonally dominant).

use crate::error::{Error, Result};

/// `out = A x` for the tridiagonal `A` with sub-diagonal `lower`
/// (`A[i+1][i]`), `diag`, and super-diagonal `upper` (`A[i][i+1]`).
pub(crate) fn tri_matvec(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64], out: &mut [f64]) {
    let n = diag.len();
    for i in 0..n {
        let mut s = diag[i] * x[i];
        if i > 0 {
            s += lower[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            s += upper[i] * x[i + 1];
        }
        out[i] = s;
    }
}

/// `out = Aᵀ x`.
pub(crate) fn tri_matvec_transpose(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64], out: &mut [f64]) {
    tri_matvec(upper, diag, lower, x, out);
}

/// LU factors of a tridiagonal matrix (Thomas algorithm).
#[derive(Debug, Clone)]
pub(crate) struct TriFactor {
    /// Multipliers `l_i = a_i / d_{i-1}` for rows `1..n`.
    mult: Vec<f64>,
    /// Pivots.
    piv: Vec<f64>,
    upper: Vec<f64>,
}

impl TriFactor {
    pub(crate) fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut piv = vec![0.0; n];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        piv[0] = diag[0];
        for i in 1..n {
            if piv[i - 1] == 0.0 || !piv[i - 1].is_finite() {
                return Err(Error::Singular(i - 1));
            }
            mult[i - 1] = lower[i - 1] / piv[i - 1];
            piv[i] = diag[i] - mult[i - 1] * upper[i - 1];
        }
        if piv[n - 1] == 0.0 || !piv[n - 1].is_finite() {
            return Err(Error::Singular(n - 1));
        }
        Ok(Self { mult, piv, upper: upper.to_vec() })
    }

    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.piv.len();
        for i in 1..n {
            b[i] -= self.mult[i - 1] * b[i - 1];
        }
        b[n - 1] /= self.piv[n - 1];
        for i in (0..n - 1).rev() {
            b[i] = (b[i] - self.upper[i] * b[i + 1]) / self.piv[i];
        }
    }
}
