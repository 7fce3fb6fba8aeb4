//! Least squares (plain and equality-constrained), AR(1) persistence fits,
//! and the innovation second moments that feed the finite-sample corrections.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{IvxError, Result};
use crate::matrix_kit::{self, SymMatrix};
use crate::model::{Hypothesis, PredictiveSample};

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub mu_hat: f64,
    pub beta_hat: DVector<f64>,
    pub residuals: DVector<f64>,
}

impl OlsFit {
    pub fn ssr(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn demean_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    xc
}

/// Least squares of `y` on `[1, X]`.
///
/// Solved on demeaned data through a thin QR factorisation, which keeps the
/// intercept exact and the residuals orthogonal to the constant.
pub fn ols_fit(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OlsFit> {
    let t = y.len();
    if x.nrows() != t {
        return Err(IvxError::Invalid(format!("y has {t} rows, X has {}", x.nrows())));
    }
    let k = x.ncols();
    if t < k + 1 {
        return Err(IvxError::Singular(format!(
            "{t} observations cannot identify {} coefficients",
            k + 1
        )));
    }
    let y_bar = y.mean();
    let x_bar = column_means(x);
    if k == 0 {
        return Ok(OlsFit {
            mu_hat: y_bar,
            beta_hat: DVector::zeros(0),
            residuals: y.add_scalar(-y_bar),
        });
    }
    let xc = demean_columns(x, &x_bar);
    let yc = y.add_scalar(-y_bar);

    let qr = xc.clone().qr();
    let r = qr.r();
    let col_scale = xc.column_iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let tol = col_scale * (t as f64) * f64::EPSILON * 64.0;
    if col_scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= tol) {
        return Err(IvxError::Singular(
            "regressors are collinear with each other or the constant".into(),
        ));
    }
    let qty = qr.q().transpose() * &yc;
    let beta_hat = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| IvxError::Singular("triangular solve failed".into()))?;
    let mu_hat = y_bar - x_bar.dot(&beta_hat);
    let residuals = yc - xc * &beta_hat;
    Ok(OlsFit {
        mu_hat,
        beta_hat,
        residuals,
    })
}

/// Least squares of `y` on `[1, X]` subject to `Rβ = r` (intercept unrestricted).
///
/// Uses the null-space parameterisation `β = β_p + Nθ` with `β_p = Rᵀ(RRᵀ)⁻¹r`
/// and the columns of `N` spanning `ker R`, so the restriction holds to
/// rounding regardless of the conditioning of `X`.
pub fn constrained_ols(y: &DVector<f64>, x: &DMatrix<f64>, hyp: &Hypothesis) -> Result<OlsFit> {
    let k = x.ncols();
    let rm = &hyp.restrictions;
    let j = rm.nrows();
    if rm.ncols() != k || hyp.rhs.len() != j {
        return Err(IvxError::Invalid(format!(
            "restriction is {}x{} with {} targets but K = {k}",
            j,
            rm.ncols(),
            hyp.rhs.len()
        )));
    }
    let rank = matrix_kit::rank(rm);
    if rank < j || j > k {
        return Err(IvxError::InfeasibleRank { rank, rows: j });
    }
    if j == 0 {
        return ols_fit(y, x);
    }
    let rrt = rm * rm.transpose();
    let lambda = matrix_kit::solve_vec(&rrt, &hyp.rhs, "R Rᵀ")?;
    let beta_p = rm.transpose() * lambda;

    let null_basis = null_space(rm, k - j)?;
    let y_adj = y - x * &beta_p;
    let (mu_hat, beta_hat) = if null_basis.ncols() == 0 {
        (y_adj.mean(), beta_p)
    } else {
        let xn = x * &null_basis;
        let fit = ols_fit(&y_adj, &xn)?;
        (fit.mu_hat, beta_p + &null_basis * fit.beta_hat)
    };
    let residuals = (y - x * &beta_hat).add_scalar(-mu_hat);
    Ok(OlsFit {
        mu_hat,
        beta_hat,
        residuals,
    })
}

// Orthonormal basis of ker R from the projector I − Rᵀ(RRᵀ)⁻¹R.
fn null_space(rm: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let k = rm.ncols();
    if dim == 0 {
        return Ok(DMatrix::zeros(k, 0));
    }
    let rrt = rm * rm.transpose();
    let proj = DMatrix::identity(k, k) - rm.transpose() * matrix_kit::solve(&rrt, rm, "R Rᵀ")?;
    let proj = SymMatrix::symmetrize(proj).into_matrix();
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let cols: Vec<_> = idx[..dim].iter().map(|&i| eig.eigenvectors.column(i)).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// AR(1) regression `x_t = a + ρ x_{t-1} + v_t` fitted by OLS.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Fit {
    pub intercept: f64,
    pub rho: f64,
    /// `v̂_t` for `t = 1..n-1`.
    pub residuals: Vec<f64>,
}

pub fn ar1_fit(series: &[f64]) -> Result<Ar1Fit> {
    let n = series.len();
    if n < 3 {
        return Err(IvxError::ZeroVariance(format!(
            "AR(1) fit needs at least 3 observations, got {n}"
        )));
    }
    let lag = &series[..n - 1];
    let cur = &series[1..];
    let m = (n - 1) as f64;
    let lag_mean = lag.iter().sum::<f64>() / m;
    let cur_mean = cur.iter().sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in lag.iter().zip(cur) {
        let d = a - lag_mean;
        sxx += d * d;
        sxy += d * (b - cur_mean);
    }
    let spread = lag.iter().fold(0.0_f64, |acc, v| acc.max((v - lag_mean).abs()));
    if !(sxx > 0.0) || spread <= f64::EPSILON * lag_mean.abs() * 16.0 {
        return Err(IvxError::ZeroVariance("lagged predictor is constant".into()));
    }
    let rho = sxy / sxx;
    let intercept = cur_mean - rho * lag_mean;
    let residuals = lag
        .iter()
        .zip(cur)
        .map(|(a, b)| b - intercept - rho * a)
        .collect();
    Ok(Ar1Fit {
        intercept,
        rho,
        residuals,
    })
}

/// OLS slope of `x_t` on `(1, x_{t-1})`.
pub fn ar1_rho(series: &[f64]) -> Result<f64> {
    ar1_fit(series).map(|f| f.rho)
}

/// Uncentered second moments of the regression and predictor innovations.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovCov {
    pub sigma_uu: f64,
    pub sigma_vu: DVector<f64>,
    pub sigma_vv: SymMatrix,
}

/// Innovation second moments on the window where both `û_t` and `v̂_t` exist.
///
/// With row `r` of the sample holding `(y_{r+1}, x_r)`, the predictor
/// innovation `v̂_t = x_t − a_i − ρ̂_i x_{t-1}` is available for `t = 1..T-1`
/// and pairs with `û_t` (row `t − 1`). All three moments use that common
/// window and its length as divisor.
pub fn innovation_cov(
    sample: &PredictiveSample,
    u_hat: &DVector<f64>,
    rho_hat: &[f64],
) -> Result<InnovCov> {
    let t = sample.len();
    let k = sample.k();
    if u_hat.len() != t || rho_hat.len() != k {
        return Err(IvxError::Invalid(format!(
            "innovation moments need {t} residuals and {k} AR roots (got {}, {})",
            u_hat.len(),
            rho_hat.len()
        )));
    }
    if t < 3 {
        return Err(IvxError::ZeroVariance("sample too short for AR(1) innovations".into()));
    }
    let n = t - 1;
    let mut v = DMatrix::zeros(n, k);
    for (i, &rho) in rho_hat.iter().enumerate() {
        let col = sample.x.column(i);
        let lag_mean = col.rows(0, n).mean();
        let cur_mean = col.rows(1, n).mean();
        let a = cur_mean - rho * lag_mean;
        for r in 0..n {
            v[(r, i)] = col[r + 1] - a - rho * col[r];
        }
    }
    let u = u_hat.rows(0, n);
    let nf = n as f64;
    let sigma_uu = u.norm_squared() / nf;
    let scale_y = sample.y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if !(sigma_uu.sqrt() > 1e-12 * scale_y) {
        return Err(IvxError::DegenerateResiduals);
    }
    let sigma_vu = v.transpose() * u / nf;
    let sigma_vv = SymMatrix::symmetrize(v.transpose() * &v / nf);
    Ok(InnovCov {
        sigma_uu,
        sigma_vu,
        sigma_vv,
    })
}

/// `ρ̂_{uv*} = Σ̂_vv^{-1/2} Σ̂_vu Σ̂_uu^{-1/2}`.
pub fn rho_uv_star(cov: &InnovCov) -> Result<DVector<f64>> {
    if !(cov.sigma_uu > 0.0) {
        return Err(IvxError::DegenerateResiduals);
    }
    let inv_root = matrix_kit::sym_inv_sqrt(&cov.sigma_vv)?;
    Ok(inv_root.as_matrix() * &cov.sigma_vu / cov.sigma_uu.sqrt())
}
