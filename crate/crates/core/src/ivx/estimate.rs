//! IV estimators built on the instrument, and the Wald/t machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{IvxError, Result};
use crate::matrix_kit;
use crate::model::Hypothesis;

/// `β̂_l = (Σ z̃ xᵀ)⁻¹ Σ z̃ y`. No demeaning is needed because `Σ z̃ = 0`.
pub fn beta_l(y: &DVector<f64>, x: &DMatrix<f64>, z_tilde: &DMatrix<f64>) -> Result<DVector<f64>> {
    let a = z_tilde.transpose() * x;
    let b = z_tilde.transpose() * y;
    matrix_kit::solve_vec(&a, &b, "Σ z̃ xᵀ")
}

fn demeaned(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    let n = z.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
    }
    out
}

/// IVX estimate with a demeaned instrument, returning `(β̂, Σ z̄ xᵀ)`.
fn ivx_block(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    start: usize,
    len: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let zb = demeaned(&z.rows(start, len).into_owned());
    let xb = x.rows(start, len);
    let yb = y.rows(start, len);
    let w = zb.transpose() * xb;
    let beta = matrix_kit::solve_vec(&w, &(zb.transpose() * yb), "Σ z̄ xᵀ")?;
    Ok((beta, w))
}

/// `β̂_l` through the weighted combination of full-sample and subsample IVX
/// estimators: `(W₁ − W₂ − W₃)⁻¹ (W₁β̂_ivx − W₂β̂_a − W₃β̂_b)`.
pub fn beta_l_weighted(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    s_a: &DMatrix<f64>,
    s_b: &DMatrix<f64>,
    t0: usize,
) -> Result<DVector<f64>> {
    let t = y.len();
    let (b_ivx, w1) = ivx_block(y, x, z, 0, t)?;
    let (b_a, wa) = ivx_block(y, x, z, 0, t0)?;
    let (b_b, wb) = ivx_block(y, x, z, t0, t - t0)?;
    let w2 = s_a * wa;
    let w3 = s_b * wb;
    let lhs = &w1 - &w2 - &w3;
    let rhs = &w1 * b_ivx - &w2 * b_a - &w3 * b_b;
    matrix_kit::solve_vec(&lhs, &rhs, "W₁ − W₂ − W₃")
}

/// `Σ_t w_t w_tᵀ e_t²` for instrument rows `w_t`.
pub fn weighted_gram(w: &DMatrix<f64>, e: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = w.clone();
    for (r, mut row) in scaled.row_iter_mut().enumerate() {
        row *= e[r];
    }
    scaled.transpose() * &scaled
}

/// Wald statistic for `H0: Rβ = r` given a covariance estimate, with the
/// t-ratio when `J = 1`.
pub fn wald_and_t(beta: &DVector<f64>, avar: &DMatrix<f64>, hyp: &Hypothesis) -> Result<(f64, Option<f64>)> {
    let rm = &hyp.restrictions;
    let d = rm * beta - &hyp.rhs;
    let v = rm * avar * rm.transpose();
    let v = (&v + v.transpose()) * 0.5;
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| IvxError::Singular("R·Avar·Rᵀ is not positive definite".into()))?;
    let q = d.dot(&chol.solve(&d));
    if !q.is_finite() {
        return Err(IvxError::Singular("non-finite Wald statistic".into()));
    }
    let t = (hyp.j() == 1).then(|| d[0] / v[(0, 0)].sqrt());
    Ok((q.max(0.0), t))
}

/// Conventional IVX estimate and its Wald statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineIvx {
    pub beta: DVector<f64>,
    pub avar: DMatrix<f64>,
    pub q: f64,
    pub t: Option<f64>,
}

/// `β̂_ivx = (Σ z̄ xᵀ)⁻¹ Σ z̄ y` with covariance
/// `(Σ z̄ xᵀ)⁻¹ (Σ z̄ z̄ᵀ û²) (Σ z̄ xᵀ)⁻ᵀ`.
pub fn baseline_ivx(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    hyp: &Hypothesis,
    u_hat: &DVector<f64>,
) -> Result<BaselineIvx> {
    let (beta, w) = ivx_block(y, x, z, 0, y.len())?;
    let zbar = demeaned(z);
    let meat = weighted_gram(&zbar, u_hat);
    let w_inv = matrix_kit::inverse(&w, "Σ z̄ xᵀ")?;
    let avar = &w_inv * meat * w_inv.transpose();
    let (q, t) = wald_and_t(&beta, &avar, hyp)?;
    Ok(BaselineIvx { beta, avar, q, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Side;
    use approx::assert_relative_eq;

    #[test]
    fn wald_zero_at_null() {
        let h = Hypothesis::marginal(2, 0, Side::TwoSided);
        let beta = DVector::from_vec(vec![0.0, 3.0]);
        let avar = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (q, t) = wald_and_t(&beta, &avar, &h).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(t, Some(0.0));
    }

    #[test]
    fn wald_equals_t_squared() {
        let h = Hypothesis::marginal(2, 1, Side::Right);
        let beta = DVector::from_vec(vec![0.4, -1.3]);
        let avar = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
        let (q, t) = wald_and_t(&beta, &avar, &h).unwrap();
        let t = t.unwrap();
        assert_relative_eq!(q, t * t, max_relative = 1e-12);
        assert_relative_eq!(t, -1.3 / 0.7f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn joint_wald_matches_explicit_2x2_solve() {
        let h = Hypothesis::joint(2);
        let beta = DVector::from_vec(vec![0.4, -1.3]);
        let (a, b, c) = (2.0, 0.3, 0.7);
        let avar = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        let (q, t) = wald_and_t(&beta, &avar, &h).unwrap();
        // explicit inverse of [[a,b],[b,c]]
        let det = a * c - b * b;
        let (x0, x1) = (beta[0], beta[1]);
        let oracle = (c * x0 * x0 - 2.0 * b * x0 * x1 + a * x1 * x1) / det;
        assert_relative_eq!(q, oracle, max_relative = 1e-12);
        assert!(t.is_none());
    }

    #[test]
    fn singular_covariance() {
        let h = Hypothesis::joint(2);
        let beta = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            wald_and_t(&beta, &DMatrix::zeros(2, 2), &h),
            Err(IvxError::Singular(_))
        ));
    }

    #[test]
    fn weighted_gram_matches_loop() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0]);
        let e = DVector::from_vec(vec![0.5, 2.0, -1.0]);
        let g = weighted_gram(&w, &e);
        let mut oracle = DMatrix::zeros(2, 2);
        for r in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    oracle[(i, j)] += w[(r, i)] * w[(r, j)] * e[r] * e[r];
                }
            }
        }
        assert_relative_eq!(g, oracle, epsilon = 1e-14);
    }
}
