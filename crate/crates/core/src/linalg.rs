//! Small dense-matrix helpers shared by the conformal-structure space and the
//! cocycle machinery. Everything is `f64` and sizes are tiny (k is 1..=6 in
//! practice), so clarity wins over cleverness.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Returns the side length of a square, nonempty, finite matrix.
pub fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::DimensionMismatch { expected: r, got: c });
    }
    if r == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(r)
}

/// Symmetric part `(M + M^T) / 2`; used to scrub roundoff asymmetry before
/// symmetric eigendecompositions.
pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest entrywise deviation from symmetry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix: `(values, vectors)` with
/// `M = vectors * diag(values) * vectors^T`. The input is symmetrized first.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_square(m)?;
    let eig = sym_part(m)
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigenFailed)?;
    Ok((eig.eigenvalues, eig.eigenvectors))
}

/// `vectors * diag(f(values)) * vectors^T`.
fn spectral_map<F: Fn(f64) -> f64>(values: &DVector<f64>, vectors: &DMatrix<f64>, f: F) -> DMatrix<f64> {
    let mapped = DVector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    let scaled = vectors * DMatrix::from_diagonal(&mapped);
    sym_part(&(scaled * vectors.transpose()))
}

/// `P^p` for symmetric positive-definite `P`. Errors if the spectrum is not
/// strictly positive.
pub fn spd_power(p: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(p)?;
    if let Some(min) = values.iter().cloned().reduce(f64::min) {
        if min <= 0.0 {
            return Err(Error::NonSpdInput {
                reason: format!("eigenvalue {min:.3e} is not positive"),
            });
        }
    }
    Ok(spectral_map(&values, &vectors, |v| v.powf(power)))
}

/// Matrix exponential of a symmetric matrix.
pub fn sym_exp(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(s)?;
    Ok(spectral_map(&values, &vectors, f64::exp))
}

/// Matrix logarithm of a symmetric positive-definite matrix.
pub fn sym_log(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(p)?;
    if let Some(min) = values.iter().cloned().reduce(f64::min) {
        if min <= 0.0 {
            return Err(Error::NonSpdInput {
                reason: format!("eigenvalue {min:.3e} is not positive"),
            });
        }
    }
    Ok(spectral_map(&values, &vectors, f64::ln))
}

/// Singular values of a square matrix, unordered.
pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_square(m)?;
    let svd = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or(Error::EigenFailed)?;
    Ok(svd.singular_values)
}
