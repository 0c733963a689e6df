//! The space of conformal structures on R^k: symmetric positive-definite
//! matrices of determinant one, carrying the affine-invariant metric
//! `d(P, Q) = ||log(P^{-1/2} Q P^{-1/2})||_F` and the GL(k) action
//! `A . P = (A P A^T) / det(A P A^T)^{1/k}`.
//!
//! For k = 2 the space is the hyperbolic plane; `dilatation` and `beltrami`
//! expose the classical quasiconformal coordinates and satisfy
//! `dist_to_base(A) = sqrt(2) * log(dilatation(A))` and
//! `dilatation(A) = (1 + |mu|) / (1 - |mu|)`.

use nalgebra::{Complex, DMatrix};

use crate::linalg::{asymmetry, check_square, singular_values, sym_eigen, sym_part};
use crate::{Error, Result};

/// Determinants below this are treated as singular.
pub const DET_TOL: f64 = 1e-14;

/// Entrywise symmetry tolerance accepted by [`ConformalStructure::new`].
pub const SYM_TOL: f64 = 1e-12;

/// Unit-determinant tolerance accepted by [`ConformalStructure::new`].
pub const UNIT_DET_TOL: f64 = 1e-10;

/// A point of the space: symmetric positive-definite form with determinant 1.
///
/// The invariants are checked once in [`ConformalStructure::new`]; values
/// produced by [`normalize`] and [`act`] are normalized by construction and
/// skip the re-check (for strongly anisotropic forms a determinant estimate
/// carries an `eps * cond` error, so re-validating would reject valid states).
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalStructure {
    form: DMatrix<f64>,
}

impl ConformalStructure {
    /// Validating constructor for externally supplied forms.
    pub fn new(form: DMatrix<f64>) -> Result<Self> {
        check_square(&form)?;
        let skew = asymmetry(&form);
        if skew > SYM_TOL {
            return Err(Error::NonSpdInput {
                reason: format!("asymmetry {skew:.3e} exceeds {SYM_TOL:.0e}"),
            });
        }
        let (values, _) = sym_eigen(&form)?;
        let mut log_det = 0.0;
        for &v in values.iter() {
            if v <= 0.0 {
                return Err(Error::NonSpdInput {
                    reason: format!("eigenvalue {v:.3e} is not positive"),
                });
            }
            log_det += v.ln();
        }
        // exp(log_det) - 1 ~ log_det near 0; compare in log scale for accuracy
        if log_det.abs() > UNIT_DET_TOL {
            return Err(Error::NonSpdInput {
                reason: format!("determinant deviates from 1 by {:.3e}", log_det.exp() - 1.0),
            });
        }
        Ok(Self { form: sym_part(&form) })
    }

    /// The base point: the round structure (identity form).
    pub fn base(k: usize) -> Self {
        assert!(k >= 1, "dimension must be at least 1");
        Self { form: DMatrix::identity(k, k) }
    }

    /// Trusted constructor for forms normalized by this module.
    fn from_normalized(form: DMatrix<f64>) -> Self {
        Self { form }
    }

    pub fn dim(&self) -> usize {
        self.form.nrows()
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    pub fn into_form(self) -> DMatrix<f64> {
        self.form
    }
}

fn checked_det(a: &DMatrix<f64>) -> Result<f64> {
    let det = a.determinant();
    if !det.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    if det.abs() < DET_TOL {
        return Err(Error::SingularMatrix { det });
    }
    Ok(det)
}

/// The conformal structure induced by the invertible linear map `A`:
/// `A A^T` rescaled to determinant one.
pub fn normalize(a: &DMatrix<f64>) -> Result<ConformalStructure> {
    act(a, &ConformalStructure::base(check_square(a)?))
}

/// Pushforward of the structure `P` by the invertible map `A`.
///
/// The rescaling uses `det(A P A^T) = det(A)^2` (P has determinant one), so
/// no determinant of the possibly ill-conditioned product is ever formed.
pub fn act(a: &DMatrix<f64>, p: &ConformalStructure) -> Result<ConformalStructure> {
    let k = check_square(a)?;
    if k != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: k });
    }
    let det = checked_det(a)?;
    let scale = (det * det).powf(1.0 / k as f64);
    let pushed = sym_part(&(a * p.form() * a.transpose())) / scale;
    if pushed.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(ConformalStructure::from_normalized(pushed))
}

/// Affine-invariant distance `||log(P^{-1/2} Q P^{-1/2})||_F`.
pub fn conf_dist(p: &ConformalStructure, q: &ConformalStructure) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let (values, vectors) = sym_eigen(p.form())?;
    let mut inv_sqrt = DMatrix::zeros(p.dim(), p.dim());
    for (i, &v) in values.iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonSpdInput {
                reason: format!("eigenvalue {v:.3e} is not positive"),
            });
        }
        let col = vectors.column(i);
        inv_sqrt += col * col.transpose() / v.sqrt();
    }
    let whitened = sym_part(&(&inv_sqrt * q.form() * &inv_sqrt));
    let (wvalues, _) = sym_eigen(&whitened)?;
    let mut sum = 0.0;
    for &w in wvalues.iter() {
        if w <= 0.0 {
            return Err(Error::NonSpdInput {
                reason: format!("whitened eigenvalue {w:.3e} is not positive"),
            });
        }
        sum += w.ln().powi(2);
    }
    Ok(sum.sqrt())
}

/// Distance from the structure induced by `A` to the round base point.
///
/// Computed from the singular values of `A` itself,
/// `2 * || log sigma - mean(log sigma) ||_2`, which agrees with
/// `conf_dist(normalize(A), base)` but avoids squaring the condition number.
pub fn dist_to_base(a: &DMatrix<f64>) -> Result<f64> {
    checked_det(a)?;
    let sigma = singular_values(a)?;
    let mut logs = Vec::with_capacity(sigma.len());
    for &s in sigma.iter() {
        if s <= 0.0 {
            return Err(Error::SingularMatrix { det: a.determinant() });
        }
        logs.push(s.ln());
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let sum: f64 = logs.iter().map(|l| (l - mean).powi(2)).sum();
    Ok(2.0 * sum.sqrt())
}

fn checked_2x2(a: &DMatrix<f64>) -> Result<f64> {
    let k = check_square(a)?;
    if k != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: k });
    }
    let det = a.determinant();
    if det <= 0.0 {
        return Err(Error::OrientationReversing { det });
    }
    Ok(det)
}

/// Quasiconformal dilatation of an orientation-preserving planar map:
/// ratio of extremal singular values.
pub fn dilatation(a: &DMatrix<f64>) -> Result<f64> {
    checked_2x2(a)?;
    let sigma = singular_values(a)?;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &s in sigma.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if lo <= 0.0 {
        return Err(Error::SingularMatrix { det: a.determinant() });
    }
    Ok(hi / lo)
}

/// Beltrami coefficient `mu = fz_bar / fz` of the linear map `A`, with
/// `fz = ((a11 + a22) + i (a21 - a12)) / 2` and
/// `fz_bar = ((a11 - a22) + i (a21 + a12)) / 2`.
pub fn beltrami(a: &DMatrix<f64>) -> Result<Complex<f64>> {
    checked_2x2(a)?;
    let fz = Complex::new(a[(0, 0)] + a[(1, 1)], a[(1, 0)] - a[(0, 1)]) * 0.5;
    let fz_bar = Complex::new(a[(0, 0)] - a[(1, 1)], a[(1, 0)] + a[(0, 1)]) * 0.5;
    Ok(fz_bar / fz)
}
