//! Domain types shared across the crate and input validation.
//!
//! Alignment convention: row `t` (0-based) of [`PredictiveSample::x`] holds
//! the predictor vector that is lagged relative to `y[t]`, i.e. the pair
//! `(y[t], x[t])` is `(y_{t+1}, x_t)` in the usual `y_t = μ + x_{t-1}ᵀβ + u_t`
//! notation. Loaders perform the lag; estimation code never re-lags.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{IvxError, Result};
use crate::matrix_kit;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSample {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl PredictiveSample {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(IvxError::Invalid(format!(
                "y has {} observations but x has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if labels.len() != x.ncols() {
            return Err(IvxError::Invalid(format!(
                "{} labels for {} predictor columns",
                labels.len(),
                x.ncols()
            )));
        }
        Ok(PredictiveSample { y, x, labels })
    }

    /// Builds a sample with default labels `x1..xK`.
    pub fn unlabeled(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(y, x, labels)
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of predictors `K`.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[default]
    #[serde(rename = "two")]
    TwoSided,
    Right,
    Left,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::TwoSided => "two",
            Side::Right => "right",
            Side::Left => "left",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = IvxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two" | "two-sided" | "both" => Ok(Side::TwoSided),
            "right" | "greater" => Ok(Side::Right),
            "left" | "less" => Ok(Side::Left),
            other => Err(IvxError::Invalid(format!("unknown side '{other}'"))),
        }
    }
}

/// Linear restriction `H0: Rβ = r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub restrictions: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub side: Side,
}

impl Hypothesis {
    pub fn new(restrictions: DMatrix<f64>, rhs: DVector<f64>, side: Side) -> Result<Self> {
        if restrictions.nrows() != rhs.len() {
            return Err(IvxError::Invalid(format!(
                "R has {} rows but r has {} entries",
                restrictions.nrows(),
                rhs.len()
            )));
        }
        Ok(Hypothesis {
            restrictions,
            rhs,
            side,
        })
    }

    /// `H0: β = 0`.
    pub fn joint(k: usize) -> Self {
        Hypothesis {
            restrictions: DMatrix::identity(k, k),
            rhs: DVector::zeros(k),
            side: Side::TwoSided,
        }
    }

    /// `H0: β_i = 0` (0-based `i`).
    pub fn marginal(k: usize, i: usize, side: Side) -> Self {
        let mut restrictions = DMatrix::zeros(1, k);
        if i < k {
            restrictions[(0, i)] = 1.0;
        }
        Hypothesis {
            restrictions,
            rhs: DVector::zeros(1),
            side,
        }
    }

    /// Number of restrictions `J`.
    pub fn j(&self) -> usize {
        self.restrictions.nrows()
    }

    /// Index `i` if the restriction is exactly `e_iᵀβ = r`.
    pub fn marginal_index(&self) -> Option<usize> {
        if self.j() != 1 {
            return None;
        }
        let row = self.restrictions.row(0);
        let nz: Vec<usize> = (0..row.len()).filter(|&c| row[c] != 0.0).collect();
        match nz.as_slice() {
            [i] if row[*i] == 1.0 => Some(*i),
            _ => None,
        }
    }

    pub fn is_joint_zero(&self) -> bool {
        let k = self.restrictions.ncols();
        self.j() == k
            && self.restrictions == DMatrix::identity(k, k)
            && self.rhs.iter().all(|&v| v == 0.0)
    }
}

/// Instrument and sample-split tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvxConfig {
    /// Instrument persistence constant; `None` means `-4 - K`.
    pub c_z: Option<f64>,
    pub delta: f64,
    pub lambda: f64,
}

impl Default for IvxConfig {
    fn default() -> Self {
        IvxConfig {
            c_z: None,
            delta: 0.95,
            lambda: 0.5,
        }
    }
}

impl IvxConfig {
    pub fn c_z_for(&self, k: usize) -> f64 {
        self.c_z.unwrap_or(-4.0 - k as f64)
    }

    /// `ρ_z = 1 + c_z / T^δ`.
    pub fn rho_z(&self, t: usize, k: usize) -> f64 {
        1.0 + self.c_z_for(k) / (t as f64).powf(self.delta)
    }

    /// `T0 = ⌊λT⌋`.
    pub fn t0(&self, t: usize) -> usize {
        (self.lambda * t as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch { detail: String },
    DegreesOfFreedom { t: usize, k: usize },
    NonFinite { what: String },
    ZeroVarianceColumn { label: String },
    RankDeficient { rank: usize, rows: usize },
    TooManyRestrictions { j: usize, k: usize },
    SidedJointTest { j: usize },
    CzNotNegative { c_z: f64 },
    DeltaOutOfRange { delta: f64 },
    LambdaOutOfRange { lambda: f64 },
    RhoZOutOfRange { rho_z: f64 },
    DegenerateSplit { t0: usize, t: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            Violation::DegreesOfFreedom { t, k } => {
                write!(f, "T = {t} is below 2K + 2 = {} for K = {k}", 2 * k + 2)
            }
            Violation::NonFinite { what } => write!(f, "non-finite values in {what}"),
            Violation::ZeroVarianceColumn { label } => {
                write!(f, "predictor '{label}' has zero sample variance")
            }
            Violation::RankDeficient { rank, rows } => {
                write!(f, "R has rank {rank} but {rows} rows")
            }
            Violation::TooManyRestrictions { j, k } => {
                write!(f, "J = {j} restrictions exceed K = {k} predictors")
            }
            Violation::SidedJointTest { j } => {
                write!(f, "one-sided alternatives need J = 1, got J = {j}")
            }
            Violation::CzNotNegative { c_z } => write!(f, "c_z must be negative, got {c_z}"),
            Violation::DeltaOutOfRange { delta } => {
                write!(f, "delta must lie in (0.5, 1), got {delta}")
            }
            Violation::LambdaOutOfRange { lambda } => {
                write!(f, "lambda must lie in (0, 1), got {lambda}")
            }
            Violation::RhoZOutOfRange { rho_z } => {
                write!(f, "instrument persistence rho_z = {rho_z} is outside (0, 1)")
            }
            Violation::DegenerateSplit { t0, t } => {
                write!(f, "split point T0 = {t0} leaves an empty subsample (T = {t})")
            }
        }
    }
}

/// Collects every violated input invariant. Never panics on finite input.
pub fn validate(sample: &PredictiveSample, hyp: &Hypothesis, cfg: &IvxConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = sample.y.len();
    let k = sample.x.ncols();

    if sample.x.nrows() != t {
        out.push(Violation::DimensionMismatch {
            detail: format!("y has {t} rows, x has {}", sample.x.nrows()),
        });
    }
    if k == 0 {
        out.push(Violation::DimensionMismatch {
            detail: "no predictors".into(),
        });
    }
    if t < 2 * k + 2 {
        out.push(Violation::DegreesOfFreedom { t, k });
    }
    if sample.y.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { what: "y".into() });
    }
    if sample.x.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { what: "x".into() });
    } else if sample.x.nrows() > 0 {
        for (c, col) in sample.x.column_iter().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                let label = sample
                    .labels
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("x{}", c + 1));
                out.push(Violation::ZeroVarianceColumn { label });
            }
        }
    }

    let j = hyp.restrictions.nrows();
    if hyp.restrictions.ncols() != k {
        out.push(Violation::DimensionMismatch {
            detail: format!("R has {} columns, K = {k}", hyp.restrictions.ncols()),
        });
    }
    if hyp.rhs.len() != j {
        out.push(Violation::DimensionMismatch {
            detail: format!("R has {j} rows, r has {}", hyp.rhs.len()),
        });
    }
    if j == 0 {
        out.push(Violation::DimensionMismatch {
            detail: "hypothesis has no restrictions".into(),
        });
    }
    if j > k {
        out.push(Violation::TooManyRestrictions { j, k });
    }
    if hyp.restrictions.iter().chain(hyp.rhs.iter()).any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite {
            what: "hypothesis".into(),
        });
    } else if j > 0 {
        let rank = matrix_kit::rank(&hyp.restrictions);
        if rank < j {
            out.push(Violation::RankDeficient { rank, rows: j });
        }
    }
    if hyp.side != Side::TwoSided && j != 1 {
        out.push(Violation::SidedJointTest { j });
    }

    let c_z = cfg.c_z_for(k);
    if !(c_z < 0.0) {
        out.push(Violation::CzNotNegative { c_z });
    }
    if !(cfg.delta > 0.5 && cfg.delta < 1.0) {
        out.push(Violation::DeltaOutOfRange { delta: cfg.delta });
    }
    if !(cfg.lambda > 0.0 && cfg.lambda < 1.0) {
        out.push(Violation::LambdaOutOfRange { lambda: cfg.lambda });
    } else if t > 0 {
        let t0 = cfg.t0(t);
        if t0 == 0 || t0 >= t {
            out.push(Violation::DegenerateSplit { t0, t });
        }
    }
    if t > 0 && c_z < 0.0 && cfg.delta.is_finite() {
        let rho_z = cfg.rho_z(t, k);
        if !(rho_z > 0.0 && rho_z < 1.0) {
            out.push(Violation::RhoZOutOfRange { rho_z });
        }
    }
    out
}

/// GARCH(1,1) parameters: `h_t² = phi0 + phi1·h_{t-1}² + phi1_bar·u_{t-1}²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub phi0: f64,
    pub phi1: f64,
    pub phi1_bar: f64,
}

impl GarchParams {
    pub fn iid(variance: f64) -> Self {
        GarchParams {
            phi0: variance,
            phi1: 0.0,
            phi1_bar: 0.0,
        }
    }

    pub fn persistence(&self) -> f64 {
        self.phi1 + self.phi1_bar
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.phi0 / (1.0 - self.persistence())
    }
}

impl Default for GarchParams {
    /// φ0 = 1, φ1 = 0.1, φ̄1 = 0.85.
    fn default() -> Self {
        GarchParams {
            phi0: 1.0,
            phi1: 0.1,
            phi1_bar: 0.85,
        }
    }
}

/// Monte Carlo data-generating process.
///
/// `x_{i,t} = ρ_i x_{i,t-1} + γ_i η_t + v̌_{i,t}` with `ρ_i = 1 + c_i / T^α`,
/// `u_t = h_t η_t` following [`GarchParams`], and `y_t = μ + x_{t-1}ᵀβ + u_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub t: usize,
    pub k: usize,
    /// 1 = strong dependence (local to unity), 0 = weak dependence.
    pub alpha: u8,
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: f64,
    pub garch: GarchParams,
    pub burn_in: usize,
}

impl DgpSpec {
    /// Builds a spec from autoregressive roots, mapping `c_i = T^α (ρ_i − 1)`.
    pub fn from_rho(t: usize, alpha: u8, rho: &[f64], gamma: &[f64]) -> Self {
        let scale = if alpha == 1 { t as f64 } else { 1.0 };
        let k = rho.len();
        DgpSpec {
            t,
            k,
            alpha,
            c: rho.iter().map(|r| scale * (r - 1.0)).collect(),
            gamma: gamma.to_vec(),
            beta: vec![0.0; k],
            mu: 1.0,
            garch: GarchParams::default(),
            burn_in: 100,
        }
    }

    pub fn rho(&self) -> Vec<f64> {
        let scale = if self.alpha == 1 { self.t as f64 } else { 1.0 };
        self.c.iter().map(|c| 1.0 + c / scale).collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(IvxError::Invalid(m));
        if self.k == 0 || self.t < 2 * self.k + 2 {
            return bad(format!("need K >= 1 and T >= 2K + 2 (T = {}, K = {})", self.t, self.k));
        }
        if self.c.len() != self.k || self.gamma.len() != self.k || self.beta.len() != self.k {
            return bad(format!(
                "c, gamma, beta must have K = {} entries (got {}, {}, {})",
                self.k,
                self.c.len(),
                self.gamma.len(),
                self.beta.len()
            ));
        }
        match self.alpha {
            1 => {
                if let Some(c) = self.c.iter().find(|&&c| !(c <= 0.0)) {
                    return bad(format!("strong dependence requires c_i <= 0, got {c}"));
                }
            }
            0 => {
                if let Some(c) = self.c.iter().find(|&&c| !((1.0 + c).abs() < 1.0)) {
                    return bad(format!("weak dependence requires |1 + c_i| < 1, got c_i = {c}"));
                }
            }
            a => return bad(format!("alpha must be 0 or 1, got {a}")),
        }
        let g = &self.garch;
        if !(g.phi0 > 0.0) || !(g.phi1 >= 0.0) || !(g.phi1_bar >= 0.0) {
            return bad(format!("GARCH requires phi0 > 0 and nonnegative phi1, phi1_bar: {g:?}"));
        }
        if !(g.persistence() < 1.0) {
            return Err(IvxError::NonStationary {
                persistence: g.persistence(),
            });
        }
        if !self.mu.is_finite() || self.beta.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return bad("non-finite DGP parameters".into());
        }
        Ok(())
    }
}

/// Echo of the resolved tuning constants for a particular sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub c_z: f64,
    pub delta: f64,
    pub lambda: f64,
    pub rho_z: f64,
    pub t0: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub q_ivx: f64,
    pub q_l: f64,
    pub q_m: f64,
    /// p-value of `Q_l^t` under the hypothesis' sidedness (J = 1 only).
    pub t_l: Option<f64>,
    pub t_m: Option<f64>,
}

/// Full output of [`crate::ivx::run_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub labels: Vec<String>,
    pub t: usize,
    pub k: usize,
    pub j: usize,
    pub side: Side,
    pub beta_ivx: Vec<f64>,
    pub beta_l: Vec<f64>,
    pub beta_m: Vec<f64>,
    pub q_ivx: f64,
    pub q_l: f64,
    pub q_m: f64,
    pub t_l: Option<f64>,
    pub t_m: Option<f64>,
    /// Wald statistic with the variance correction only (no mean shift, unit weights).
    pub q_vee: f64,
    pub p_values: PValues,
    pub rho_hat: Vec<f64>,
    pub w_z: Vec<f64>,
    pub rho_uv_star: Vec<f64>,
    pub config: ConfigEcho,
    /// Constrained residuals were identically zero; statistics set to 0.
    pub degenerate_fit: bool,
}

impl TestReport {
    /// The p-value that answers the stated hypothesis for `Q_m` (one-sided when requested).
    pub fn headline_p_value(&self) -> f64 {
        match (self.side, self.p_values.t_m) {
            (Side::TwoSided, _) | (_, None) => self.p_values.q_m,
            (_, Some(p)) => p,
        }
    }
}

/// Survival function of χ²_df.
pub fn chi2_sf(q: f64, df: usize) -> f64 {
    if !(q > 0.0) {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df >= 1");
    dist.sf(q).clamp(0.0, 1.0)
}

pub fn chi2_cdf(q: f64, df: usize) -> f64 {
    1.0 - chi2_sf(q, df)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// p-value of a t-type statistic under a standard normal null.
pub fn t_p_value(t: f64, side: Side) -> f64 {
    let n = std_normal();
    let p = match side {
        Side::TwoSided => 2.0 * n.sf(t.abs()),
        Side::Right => n.sf(t),
        Side::Left => n.cdf(t),
    };
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize, k: usize) -> PredictiveSample {
        let x = DMatrix::from_fn(t, k, |r, c| ((r * (c + 2)) as f64).sin() + r as f64 * 0.01);
        let y = DVector::from_fn(t, |r, _| (r as f64).cos());
        PredictiveSample::unlabeled(y, x).unwrap()
    }

    #[test]
    fn valid_inputs_pass() {
        let s = sample(100, 2);
        assert!(validate(&s, &Hypothesis::joint(2), &IvxConfig::default()).is_empty());
    }

    #[test]
    fn degrees_of_freedom_boundary() {
        let s = sample(5, 2);
        let v = validate(&s, &Hypothesis::joint(2), &IvxConfig::default());
        assert!(v.contains(&Violation::DegreesOfFreedom { t: 5, k: 2 }), "{v:?}");
        let s = sample(6, 2);
        let v = validate(&s, &Hypothesis::joint(2), &IvxConfig::default());
        assert!(!v.iter().any(|x| matches!(x, Violation::DegreesOfFreedom { .. })));
    }

    #[test]
    fn duplicated_rows_are_rank_deficient() {
        let s = sample(100, 2);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let h = Hypothesis::new(r, DVector::zeros(2), Side::TwoSided).unwrap();
        let v = validate(&s, &h, &IvxConfig::default());
        assert_eq!(v, vec![Violation::RankDeficient { rank: 1, rows: 2 }]);
    }

    #[test]
    fn reports_every_problem() {
        let mut s = sample(100, 2);
        s.x.column_mut(1).fill(3.0);
        s.y[4] = f64::NAN;
        let h = Hypothesis {
            restrictions: DMatrix::identity(2, 2),
            rhs: DVector::zeros(2),
            side: Side::Right,
        };
        let cfg = IvxConfig {
            c_z: Some(1.0),
            delta: 1.2,
            lambda: 0.0,
        };
        let v = validate(&s, &h, &cfg);
        assert!(v.contains(&Violation::NonFinite { what: "y".into() }));
        assert!(v.contains(&Violation::ZeroVarianceColumn { label: "x2".into() }));
        assert!(v.contains(&Violation::SidedJointTest { j: 2 }));
        assert!(v.contains(&Violation::CzNotNegative { c_z: 1.0 }));
        assert!(v.contains(&Violation::DeltaOutOfRange { delta: 1.2 }));
        assert!(v.contains(&Violation::LambdaOutOfRange { lambda: 0.0 }));
    }

    #[test]
    fn config_defaults() {
        let cfg = IvxConfig::default();
        assert_eq!(cfg.c_z_for(10), -14.0);
        assert_eq!(cfg.t0(751), 375);
        let rho = IvxConfig {
            c_z: Some(-5.0),
            ..cfg
        }
        .rho_z(100, 1);
        assert!((rho - (1.0 - 5.0 / 100f64.powf(0.95))).abs() < 1e-15);
        assert!((rho - 0.937054).abs() < 5e-7, "{rho}");
    }

    #[test]
    fn dgp_spec_checks() {
        let mut d = DgpSpec::from_rho(250, 1, &[0.996, 1.0], &[-3.0, 2.0]);
        assert!(d.check().is_ok());
        assert!((d.rho()[0] - 0.996).abs() < 1e-12);
        d.garch.phi1_bar = 0.95;
        assert!(matches!(d.check(), Err(IvxError::NonStationary { .. })));
        let mut w = DgpSpec::from_rho(250, 0, &[0.5], &[1.0]);
        assert!(w.check().is_ok());
        w.c[0] = -2.5;
        assert!(w.check().is_err());
    }

    #[test]
    fn p_values() {
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        assert!((chi2_sf(3.841458820694124, 1) - 0.05).abs() < 1e-9);
        assert!((t_p_value(1.959963984540054, Side::TwoSided) - 0.05).abs() < 1e-9);
        assert!((t_p_value(1.6448536269514722, Side::Right) - 0.05).abs() < 1e-9);
        assert!((t_p_value(-1.6448536269514722, Side::Left) - 0.05).abs() < 1e-9);
        assert_eq!(t_p_value(0.0, Side::TwoSided), 1.0);
    }

    #[test]
    fn marginal_index_detection() {
        assert_eq!(Hypothesis::marginal(3, 1, Side::Right).marginal_index(), Some(1));
        assert_eq!(Hypothesis::joint(3).marginal_index(), None);
        assert!(Hypothesis::joint(3).is_joint_zero());
    }
}
