//! Dense linear algebra behind the trace-norm coupling: products, SVD,
//! and square roots of symmetric positive semi-definite matrices.

mod eigen;
mod matrix;
mod svd;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use matrix::{dot, Matrix};
pub use svd::{svd, SvdResult};

use thiserror::Error;

/// Relative asymmetry `‖A − Aᵀ‖_F / max(1, ‖A‖_F)` accepted as "symmetric".
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue (relative to `max(1, λ_max)`) still treated as round-off.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a square matrix, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("matrix is not symmetric (‖A − Aᵀ‖_F = {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("ridge must be strictly positive for an inverse square root, got {0}")]
    NonPositiveRidge(f64),
    #[error("matrix is singular or indefinite (eigenvalue {0:e})")]
    Singular(f64),
    #[error("{routine} did not converge after {iterations} sweeps")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
}

/// Sum of singular values.
pub fn trace_norm(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(svd(m)?.s.iter().sum())
}

/// Eigendecomposition of a symmetric PSD matrix with the ridge folded in:
/// eigenvalues are `max(λ, 0) + mu`.
fn ridged_eigen(m: &Matrix, mu: f64) -> Result<SymmetricEigen, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare(m.shape()));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite("psd input"));
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * m.frobenius_norm().max(1.0) {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let mut e = symmetric_eigen(m)?;
    let top = e.values.first().copied().unwrap_or(0.0).max(1.0);
    if let Some(&low) = e.values.last() {
        if low < -PSD_TOL * top {
            return Err(LinalgError::NotPsd(low));
        }
    }
    for l in &mut e.values {
        *l = l.max(0.0) + mu;
    }
    Ok(e)
}

/// `(m + mu·I)^{1/2}` for symmetric PSD `m`.
pub fn psd_sqrt(m: &Matrix, mu: f64) -> Result<Matrix, LinalgError> {
    if !(mu >= 0.0) {
        return Err(LinalgError::NotPsd(mu));
    }
    Ok(ridged_eigen(m, mu)?.reassemble(f64::sqrt))
}

/// `(m + mu·I)^{-1/2}` for symmetric PSD `m`; `mu` must be positive.
pub fn psd_inv_sqrt(m: &Matrix, mu: f64) -> Result<Matrix, LinalgError> {
    if !(mu > 0.0) {
        return Err(LinalgError::NonPositiveRidge(mu));
    }
    Ok(ridged_eigen(m, mu)?.reassemble(|l| 1.0 / l.sqrt()))
}

/// Both `(m + mu·I)^{1/2}` and its inverse from a single decomposition.
pub fn psd_sqrt_and_inv_sqrt(m: &Matrix, mu: f64) -> Result<(Matrix, Matrix), LinalgError> {
    if !(mu > 0.0) {
        return Err(LinalgError::NonPositiveRidge(mu));
    }
    let e = ridged_eigen(m, mu)?;
    Ok((e.reassemble(f64::sqrt), e.reassemble(|l| 1.0 / l.sqrt())))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare(m.shape()));
    }
    let e = symmetric_eigen(m)?;
    let top = e
        .values
        .first()
        .copied()
        .unwrap_or(0.0)
        .abs()
        .max(f64::MIN_POSITIVE);
    if let Some(&low) = e.values.last() {
        if !(low > top * 1e-14) {
            return Err(LinalgError::Singular(low));
        }
    }
    Ok(e.reassemble(|l| 1.0 / l))
}
