//! Mean-shift and variance-enlargement corrections for the split-sample
//! IV estimator.
//!
//! With `A = Σ z̃ xᵀ` and `Ω = Σ z̃ z̃ᵀ û²`:
//!
//! ```text
//! Σ̂_zz = Σ̂_uu [ (I−S_a) G_a (I−S_a)ᵀ + (I−S_b) G_b (I−S_b)ᵀ ] / (1 − ρ_z²)
//! ϖ̂_l  = −½ ( Σ̂_zz^{-1/2} Ω Σ̂_zz^{-1/2} − I )
//! w_i   = exp(−T (1 − ρ̂_i)² / K)
//! H_l   = A⁻¹ ( T/(T−2K−1) · Ω )^{1/2}
//! B_m   = A⁻¹ Ω^{1/2} ( I + W ϖ̂ ϖ̂ᵀ W )^{1/2}
//! β̂_m  = β̂_l + B_m W ρ̂_{uv*} T^{-(1−δ)/2} (K+1) / (2 √(−2 c_z))
//! ```
//!
//! where `G_a`, `G_b` are the sums of `Δx Δxᵀ` over each subsample.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::estimators::InnovCov;
use crate::ivx::estimate::weighted_gram;
use crate::ivx::instrument::{differences, Instruments};
use crate::matrix_kit::{self, SymMatrix};
use crate::model::{IvxConfig, PredictiveSample};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionBundle {
    pub sigma_zz_hat: SymMatrix,
    pub varpi_l: SymMatrix,
    /// Diagonal of `W_z`.
    pub w_z: Vec<f64>,
    pub rho_uv_star: DVector<f64>,
    pub h_l: DMatrix<f64>,
    pub b_m: DMatrix<f64>,
    /// `Σ z̃ z̃ᵀ û²`.
    pub omega: SymMatrix,
}

impl CorrectionBundle {
    pub fn w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.w_z))
    }

    /// `I + W ϖ̂ ϖ̂ᵀ W`.
    pub fn enlargement(&self) -> SymMatrix {
        enlargement(&self.varpi_l, &self.w_matrix())
    }

    /// `H_l H_lᵀ`.
    pub fn avar_l(&self) -> DMatrix<f64> {
        SymMatrix::symmetrize(&self.h_l * self.h_l.transpose()).into_matrix()
    }

    /// `H_l (I + W ϖ̂ ϖ̂ᵀ W) H_lᵀ`.
    pub fn avar_m(&self) -> DMatrix<f64> {
        let e = self.enlargement();
        SymMatrix::symmetrize(&self.h_l * e.as_matrix() * self.h_l.transpose()).into_matrix()
    }

    /// `H_l (I + ϖ̂ ϖ̂ᵀ) H_lᵀ`: variance correction at unit weights.
    pub fn avar_vee(&self) -> DMatrix<f64> {
        let k = self.w_z.len();
        let e = enlargement(&self.varpi_l, &DMatrix::identity(k, k));
        SymMatrix::symmetrize(&self.h_l * e.as_matrix() * self.h_l.transpose()).into_matrix()
    }
}

fn enlargement(varpi: &SymMatrix, w: &DMatrix<f64>) -> SymMatrix {
    let k = varpi.dim();
    let wv = w * varpi.as_matrix();
    SymMatrix::symmetrize(DMatrix::identity(k, k) + &wv * wv.transpose())
}

/// Persistence weights `exp(−T (1 − ρ̂_i)² / K)`.
pub fn persistence_weights(rho_hat: &[f64], t: usize) -> Vec<f64> {
    let k = rho_hat.len() as f64;
    rho_hat
        .iter()
        .map(|r| (-(t as f64) * (1.0 - r).powi(2) / k).exp())
        .collect()
}

/// Estimated long-run instrument covariance from predictor differences.
pub fn sigma_zz_hat(x: &DMatrix<f64>, inst: &Instruments, sigma_uu: f64) -> SymMatrix {
    let (t, k) = x.shape();
    let dx = differences(x);
    let t0 = inst.t0;
    let ga = dx.rows(0, t0).transpose() * dx.rows(0, t0);
    let gb = dx.rows(t0, t - t0).transpose() * dx.rows(t0, t - t0);
    let id = DMatrix::<f64>::identity(k, k);
    let ia = &id - &inst.s_a;
    let ib = &id - &inst.s_b;
    let denom = 1.0 - inst.rho_z * inst.rho_z;
    let m = (&ia * ga * ia.transpose() + &ib * gb * ib.transpose()) * (sigma_uu / denom);
    SymMatrix::symmetrize(m)
}

pub fn correction_bundle(
    sample: &PredictiveSample,
    inst: &Instruments,
    u_hat: &DVector<f64>,
    rho_hat: &[f64],
    cov: &InnovCov,
    _cfg: &IvxConfig,
) -> Result<CorrectionBundle> {
    let (t, k) = sample.x.shape();
    let rho_uv_star = crate::estimators::rho_uv_star(cov)?;

    let omega = SymMatrix::symmetrize(weighted_gram(&inst.z_tilde, u_hat));
    let sigma_zz = sigma_zz_hat(&sample.x, inst, cov.sigma_uu);
    let s_inv_root = matrix_kit::sym_inv_sqrt(&sigma_zz)?;
    let whitened = s_inv_root.as_matrix() * omega.as_matrix() * s_inv_root.as_matrix();
    let varpi_l =
        SymMatrix::symmetrize((whitened - DMatrix::<f64>::identity(k, k)) * -0.5);

    let w_z = persistence_weights(rho_hat, t);

    let a = inst.z_tilde.transpose() * &sample.x;
    let a_inv = matrix_kit::inverse(&a, "Σ z̃ xᵀ")?;
    let omega_root = matrix_kit::sym_sqrt(&omega)?;
    let dof = t as f64 / (t as f64 - 2.0 * k as f64 - 1.0);
    let h_l = &a_inv * omega_root.as_matrix() * dof.sqrt();

    let w = DMatrix::from_diagonal(&DVector::from_column_slice(&w_z));
    let enl_root = matrix_kit::sym_sqrt(&enlargement(&varpi_l, &w))?;
    let b_m = &a_inv * omega_root.as_matrix() * enl_root.as_matrix();

    Ok(CorrectionBundle {
        sigma_zz_hat: sigma_zz,
        varpi_l,
        w_z,
        rho_uv_star,
        h_l,
        b_m,
        omega,
    })
}

/// Scalar multiplying `B_m W ρ̂_{uv*}`: `T^{-(1−δ)/2} (K+1) / (2 √(−2 c_z))`.
pub fn shift_scale(cfg: &IvxConfig, t: usize, k: usize) -> f64 {
    let c_z = cfg.c_z_for(k);
    (t as f64).powf(-(1.0 - cfg.delta) / 2.0) * (k as f64 + 1.0) / 2.0 / (-2.0 * c_z).sqrt()
}

/// Mean-shift corrected estimator.
pub fn beta_m(
    beta_l: &DVector<f64>,
    bundle: &CorrectionBundle,
    cfg: &IvxConfig,
    t: usize,
    k: usize,
) -> DVector<f64> {
    let weighted = DVector::from_iterator(
        k,
        bundle.rho_uv_star.iter().zip(&bundle.w_z).map(|(r, w)| r * w),
    );
    beta_l + &bundle.b_m * weighted * shift_scale(cfg, t, k)
}
