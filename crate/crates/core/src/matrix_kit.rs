//! Small dense symmetric-matrix kernel.
//!
//! Square roots are the unique symmetric PSD roots obtained from the
//! eigendecomposition `A = Q diag(λ) Qᵀ`, so `A^{1/2} = Q diag(√λ) Qᵀ` and
//! `A^{-1/2} = Q diag(1/√λ) Qᵀ`. Tolerances are relative to `max(1, scale)`
//! so that unit-scale inputs see the absolute thresholds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{IvxError, Result};

/// Symmetry tolerance (relative to `max(1, max|a_ij|)`).
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_TOL * max(1, max|λ|)` are treated as zero when negative.
pub const PSD_TOL: f64 = 1e-10;
/// Inverse roots require `λ_min > SINGULAR_TOL * λ_max`.
pub const SINGULAR_TOL: f64 = 1e-12;

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry and wraps the matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(IvxError::Invalid(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL * scale(&m) || !asym.is_finite() {
            return Err(IvxError::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        Ok(SymMatrix(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`. Used for products that are symmetric in
    /// exact arithmetic but pick up rounding asymmetry.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize requires a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn scale(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

/// Eigendecomposition with clamping of numerically-zero negative eigenvalues.
fn psd_eigen(a: &SymMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.0.iter().any(|v| !v.is_finite()) {
        return Err(IvxError::Invalid("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(a.0.clone());
    let lam_scale = eig.eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * lam_scale {
        return Err(IvxError::NotPsd {
            min_eigenvalue: min,
        });
    }
    let lam = eig.eigenvalues.map(|v| v.max(0.0));
    Ok((lam, eig.eigenvectors))
}

fn recompose(q: &DMatrix<f64>, d: &DVector<f64>) -> SymMatrix {
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    SymMatrix::symmetrize(scaled * q.transpose())
}

/// Symmetric PSD square root.
pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (lam, q) = psd_eigen(a)?;
    Ok(recompose(&q, &lam.map(f64::sqrt)))
}

/// Inverse of the symmetric square root.
pub fn sym_inv_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (lam, q) = psd_eigen(a)?;
    let max = lam.iter().copied().fold(0.0_f64, f64::max);
    let min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= SINGULAR_TOL * max {
        return Err(IvxError::Singular(format!(
            "inverse square root needs a positive definite matrix (eigenvalue range [{min:e}, {max:e}])"
        )));
    }
    Ok(recompose(&q, &lam.map(|v| 1.0 / v.sqrt())))
}

/// Solves `A X = B` by LU with partial pivoting; fails on (numerically) singular `A`.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    if !is_well_posed(a, lu.u().diagonal().iter().copied()) {
        return Err(IvxError::Singular(what.to_string()));
    }
    lu.solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| IvxError::Singular(what.to_string()))
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let m = solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), what)?;
    Ok(m.column(0).into_owned())
}

pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    solve(a, &DMatrix::identity(a.nrows(), a.ncols()), what)
}

// Rejects pivots that are zero relative to the matrix scale.
fn is_well_posed(a: &DMatrix<f64>, pivots: impl Iterator<Item = f64>) -> bool {
    let s = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if s == 0.0 || !s.is_finite() {
        return false;
    }
    let tol = s * a.nrows() as f64 * f64::EPSILON * 16.0;
    pivots.into_iter().all(|p| p.abs() > tol)
}

/// Numerical rank via singular values.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 || !max.is_finite() {
        return 0;
    }
    let tol = max * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * 64.0;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
