//! Self-generated instrument and the split-sample modification that removes
//! the `Σz · Σu` cross term.

use nalgebra::{DMatrix, DVector};

use crate::error::{IvxError, Result};
use crate::model::IvxConfig;

/// Instrument matrices aligned with the sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruments {
    /// Row `r` holds `z_r` (the instrument paired with predictor row `r`).
    pub z: DMatrix<f64>,
    /// Split-sample instrument `z̃`; every column sums to zero.
    pub z_tilde: DMatrix<f64>,
    pub s_a: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    pub t0: usize,
    pub rho_z: f64,
}

impl Instruments {
    pub fn build(x: &DMatrix<f64>, cfg: &IvxConfig) -> Result<Self> {
        let (t, k) = x.shape();
        let rho_z = cfg.rho_z(t, k);
        let t0 = cfg.t0(t);
        let z = build_instrument_with_rho(x, rho_z);
        let (s_a, s_b) = split_weights(&z, t0)?;
        let z_tilde = modified_instrument(&z, &s_a, &s_b, t0);
        Ok(Instruments {
            z,
            z_tilde,
            s_a,
            s_b,
            t0,
            rho_z,
        })
    }
}

/// `z_t = ρ_z z_{t-1} + Δx_t` with `z_0 = 0`, using `ρ_z` from `cfg`.
pub fn build_instrument(x: &DMatrix<f64>, cfg: &IvxConfig) -> DMatrix<f64> {
    build_instrument_with_rho(x, cfg.rho_z(x.nrows(), x.ncols()))
}

pub fn build_instrument_with_rho(x: &DMatrix<f64>, rho_z: f64) -> DMatrix<f64> {
    let (t, k) = x.shape();
    let mut z = DMatrix::zeros(t, k);
    for c in 0..k {
        for r in 1..t {
            z[(r, c)] = rho_z * z[(r - 1, c)] + (x[(r, c)] - x[(r - 1, c)]);
        }
    }
    z
}

/// First differences aligned like the instrument (`Δx` of row 0 is zero).
pub fn differences(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, k) = x.shape();
    DMatrix::from_fn(t, k, |r, c| if r == 0 { 0.0 } else { x[(r, c)] - x[(r - 1, c)] })
}

fn block_mean(z: &DMatrix<f64>, start: usize, len: usize) -> DVector<f64> {
    let block = z.rows(start, len);
    DVector::from_iterator(z.ncols(), block.column_iter().map(|c| c.sum() / len as f64))
}

/// Split weights `S_a = z̄ z̄_aᵀ (z̄_aᵀ z̄_a)⁻¹` and `S_b = z̄ z̄_bᵀ (z̄_bᵀ z̄_b)⁻¹`,
/// where `z̄` is the full-sample mean of the instrument and `z̄_a`, `z̄_b` are
/// the means over rows `[0, T0)` and `[T0, T)`. Both satisfy `S z̄_block = z̄`.
pub fn split_weights(z: &DMatrix<f64>, t0: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t = z.nrows();
    if t0 == 0 || t0 >= t {
        return Err(IvxError::Invalid(format!(
            "split point T0 = {t0} must satisfy 0 < T0 < T = {t}"
        )));
    }
    let full = block_mean(z, 0, t);
    let weight = |sub: DVector<f64>, name: &str| -> Result<DMatrix<f64>> {
        let gram = sub.norm_squared();
        let zscale = z.amax();
        if !(gram > 0.0) || sub.amax() <= f64::EPSILON * zscale {
            return Err(IvxError::Singular(format!(
                "{name} subsample mean of the instrument is zero"
            )));
        }
        Ok(&full * sub.transpose() / gram)
    };
    let s_a = weight(block_mean(z, 0, t0), "first")?;
    let s_b = weight(block_mean(z, t0, t - t0), "second")?;
    Ok((s_a, s_b))
}

/// `z̃_r = (I − S_a) z_r` for `r < T0`, `(I − S_b) z_r` afterwards.
pub fn modified_instrument(
    z: &DMatrix<f64>,
    s_a: &DMatrix<f64>,
    s_b: &DMatrix<f64>,
    t0: usize,
) -> DMatrix<f64> {
    let (t, k) = z.shape();
    let id = DMatrix::<f64>::identity(k, k);
    let ma = (&id - s_a).transpose();
    let mb = (&id - s_b).transpose();
    let mut out = DMatrix::zeros(t, k);
    let t0 = t0.min(t);
    out.rows_mut(0, t0).copy_from(&(z.rows(0, t0) * ma));
    out.rows_mut(t0, t - t0).copy_from(&(z.rows(t0, t - t0) * mb));
    out
}
