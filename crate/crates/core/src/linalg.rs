//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("Schur iteration did not converge")]
    SchurFailed,
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("eigenvector residual {0:e} too large")]
    Residual(f64),
    #[error("empty matrix")]
    Empty,
}

/// All eigenvalues, via the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>, LinalgError> {
    if m.nrows() == 0 {
        return Err(LinalgError::Empty);
    }
    let schur = m.clone().try_schur(1e-14, 100_000).ok_or(LinalgError::SchurFailed)?;
    let ev = schur.eigenvalues().ok_or(LinalgError::SchurFailed)?;
    Ok(ev.iter().copied().collect())
}

/// Eigenpair near `shift`, from shifted inverse iteration started at `start`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: Complex64,
    pub vector: CVector,
    /// `|A v - value v| / |v|`.
    pub residual: f64,
}

pub fn inverse_iteration(
    m: &CMatrix,
    shift: Complex64,
    start: Option<&CVector>,
    iterations: usize,
) -> Result<EigenPair, LinalgError> {
    let n = m.nrows();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    // Nudge the shift off the eigenvalue so the factorization stays regular.
    let nudge = Complex64::new(1e-10, 1e-10) * (1.0 + shift.norm());
    let shifted = m - CMatrix::identity(n, n) * (shift + nudge);
    let lu = shifted.lu();
    let mut v = match start {
        Some(s) if s.len() == n && s.norm() > 0.0 => s.clone(),
        _ => CVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * (i as f64).sin(), 0.05 * (i as f64).cos())),
    };
    v /= Complex64::from(v.norm());
    for _ in 0..iterations.max(1) {
        let w = lu.solve(&v).ok_or(LinalgError::Singular)?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(LinalgError::Singular);
        }
        v = w / Complex64::from(norm);
    }
    let av = m * &v;
    let value = v.dotc(&av) / v.dotc(&v);
    let residual = (&av - &v * value).norm() / v.norm();
    Ok(EigenPair { value, vector: v, residual })
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Index of the eigenvalue of largest modulus.
pub fn dominant_index(ev: &[Complex64]) -> usize {
    ev.iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}
