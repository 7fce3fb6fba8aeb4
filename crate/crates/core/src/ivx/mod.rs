//! Split-sample IVX inference with mean-shift and variance corrections.
//!
//! [`run_test`] executes the whole procedure: constrained residuals under
//! `H0`, the IVX instrument, the split-sample instrument `z̃`, the IV
//! estimator `β̂_l`, persistence and endogeneity estimates, the correction
//! bundle, the shifted estimator `β̂_m`, and the Wald/t statistics `Q_l`,
//! `Q_m`, `Q_l^t`, `Q_m^t` next to the conventional IVX statistic.

pub mod correction;
pub mod estimate;
pub mod instrument;

use nalgebra::{DMatrix, DVector};

pub use correction::{beta_m, correction_bundle, persistence_weights, CorrectionBundle};
pub use estimate::{baseline_ivx, beta_l, beta_l_weighted, wald_and_t, BaselineIvx};
pub use instrument::{build_instrument, modified_instrument, split_weights, Instruments};

use crate::error::{IvxError, Result, StageExt};
use crate::estimators::{self, InnovCov};
use crate::model::{
    chi2_sf, t_p_value, validate, ConfigEcho, Hypothesis, IvxConfig, PValues, PredictiveSample,
    TestReport,
};

/// Every intermediate quantity of one test, for callers that need more than
/// the report.
#[derive(Debug, Clone)]
pub struct IvxFit {
    pub instruments: Instruments,
    pub u_hat: DVector<f64>,
    pub rho_hat: Vec<f64>,
    /// `None` when the constrained residuals vanish identically.
    pub innovations: Option<InnovCov>,
    pub bundle: Option<CorrectionBundle>,
    pub beta_l: DVector<f64>,
    pub beta_m: DVector<f64>,
    pub baseline: Option<BaselineIvx>,
}

fn residuals_vanish(u_hat: &DVector<f64>, y: &DVector<f64>) -> bool {
    let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let rms = (u_hat.norm_squared() / u_hat.len().max(1) as f64).sqrt();
    rms <= 1e-12 * scale
}

pub fn fit(sample: &PredictiveSample, hyp: &Hypothesis, cfg: &IvxConfig) -> Result<IvxFit> {
    let violations = validate(sample, hyp, cfg);
    if !violations.is_empty() {
        return Err(IvxError::Validation(violations));
    }
    let (t, k) = sample.x.shape();
    let y = &sample.y;
    let x = &sample.x;

    let restricted = estimators::constrained_ols(y, x, hyp).stage("constrained OLS")?;
    let u_hat = restricted.residuals;
    let instruments = Instruments::build(x, cfg).stage("instrument construction")?;
    let beta_l = estimate::beta_l(y, x, &instruments.z_tilde).stage("split-sample IV estimator")?;
    let rho_hat = x
        .column_iter()
        .map(|c| estimators::ar1_rho(c.as_slice()))
        .collect::<Result<Vec<_>>>()
        .stage("AR(1) persistence")?;

    if residuals_vanish(&u_hat, y) {
        let baseline = baseline_ivx(y, x, &instruments.z, hyp, &u_hat).ok();
        return Ok(IvxFit {
            instruments,
            u_hat,
            rho_hat,
            innovations: None,
            bundle: None,
            beta_m: beta_l.clone(),
            beta_l,
            baseline,
        });
    }

    let innovations =
        estimators::innovation_cov(sample, &u_hat, &rho_hat).stage("innovation covariance")?;
    let bundle = correction_bundle(sample, &instruments, &u_hat, &rho_hat, &innovations, cfg)
        .stage("correction terms")?;
    let beta_m = correction::beta_m(&beta_l, &bundle, cfg, t, k);
    let baseline =
        baseline_ivx(y, x, &instruments.z, hyp, &u_hat).stage("baseline IVX")?;
    Ok(IvxFit {
        instruments,
        u_hat,
        rho_hat,
        innovations: Some(innovations),
        bundle: Some(bundle),
        beta_l,
        beta_m,
        baseline: Some(baseline),
    })
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Runs the full test of `H0: Rβ = r`.
pub fn run_test(sample: &PredictiveSample, hyp: &Hypothesis, cfg: &IvxConfig) -> Result<TestReport> {
    let f = fit(sample, hyp, cfg)?;
    report_from_fit(sample, hyp, cfg, &f)
}

pub fn report_from_fit(
    sample: &PredictiveSample,
    hyp: &Hypothesis,
    cfg: &IvxConfig,
    f: &IvxFit,
) -> Result<TestReport> {
    let (t, k) = sample.x.shape();
    let j = hyp.j();
    let config = ConfigEcho {
        c_z: cfg.c_z_for(k),
        delta: cfg.delta,
        lambda: cfg.lambda,
        rho_z: f.instruments.rho_z,
        t0: f.instruments.t0,
    };
    let w_z = persistence_weights(&f.rho_hat, t);
    let beta_ivx = f
        .baseline
        .as_ref()
        .map(|b| to_vec(&b.beta))
        .unwrap_or_else(|| to_vec(&f.beta_l));

    let Some(bundle) = &f.bundle else {
        // Exact fit under H0: every statistic is zero.
        let t_stat = (j == 1).then_some(0.0);
        return Ok(TestReport {
            labels: sample.labels.clone(),
            t,
            k,
            j,
            side: hyp.side,
            beta_ivx,
            beta_l: to_vec(&f.beta_l),
            beta_m: to_vec(&f.beta_m),
            q_ivx: 0.0,
            q_l: 0.0,
            q_m: 0.0,
            t_l: t_stat,
            t_m: t_stat,
            q_vee: 0.0,
            p_values: PValues {
                q_ivx: 1.0,
                q_l: 1.0,
                q_m: 1.0,
                t_l: t_stat.map(|_| 1.0),
                t_m: t_stat.map(|_| 1.0),
            },
            rho_hat: f.rho_hat.clone(),
            w_z,
            rho_uv_star: vec![0.0; k],
            config,
            degenerate_fit: true,
        });
    };

    let (q_l, t_l) = wald_and_t(&f.beta_l, &bundle.avar_l(), hyp).stage("Q_l")?;
    let (q_m, t_m) = wald_and_t(&f.beta_m, &bundle.avar_m(), hyp).stage("Q_m")?;
    let (q_vee, _) = wald_and_t(&f.beta_l, &bundle.avar_vee(), hyp).stage("variance-corrected Wald")?;
    let baseline = f
        .baseline
        .as_ref()
        .ok_or_else(|| IvxError::Singular("baseline IVX unavailable".into()).at("baseline IVX"))?;

    Ok(TestReport {
        labels: sample.labels.clone(),
        t,
        k,
        j,
        side: hyp.side,
        beta_ivx,
        beta_l: to_vec(&f.beta_l),
        beta_m: to_vec(&f.beta_m),
        q_ivx: baseline.q,
        q_l,
        q_m,
        t_l,
        t_m,
        q_vee,
        p_values: PValues {
            q_ivx: chi2_sf(baseline.q, j),
            q_l: chi2_sf(q_l, j),
            q_m: chi2_sf(q_m, j),
            t_l: t_l.map(|v| t_p_value(v, hyp.side)),
            t_m: t_m.map(|v| t_p_value(v, hyp.side)),
        },
        rho_hat: f.rho_hat.clone(),
        w_z: bundle.w_z.clone(),
        rho_uv_star: to_vec(&bundle.rho_uv_star),
        config,
        degenerate_fit: false,
    })
}

/// Column sums of `z̃`, which vanish identically.
pub fn centering_residual(z_tilde: &DMatrix<f64>) -> Vec<f64> {
    z_tilde.column_iter().map(|c| c.sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Side;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn persistent_sample(t: usize, k: usize, beta: &[f64], noise: f64, seed: u64) -> PredictiveSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(t, k);
        let mut prev = vec![0.0; k];
        let mut eta = vec![0.0; t];
        for r in 0..t {
            let e: f64 = rng.sample(StandardNormal);
            eta[r] = e;
            for c in 0..k {
                let v: f64 = rng.sample(StandardNormal);
                prev[c] = 0.98 * prev[c] + 0.5 * e + v;
                x[(r, c)] = prev[c];
            }
        }
        let y = DVector::from_fn(t, |r, _| {
            let u = if r + 1 < t { eta[r + 1] } else { rng.sample(StandardNormal) };
            1.0 + (0..k).map(|c| x[(r, c)] * beta[c]).sum::<f64>() + noise * u
        });
        PredictiveSample::unlabeled(y, x).unwrap()
    }

    #[test]
    fn noiseless_null_gives_zero_statistics() {
        let s = persistent_sample(120, 2, &[0.0, 0.0], 0.0, 1);
        let r = run_test(&s, &Hypothesis::joint(2), &IvxConfig::default()).unwrap();
        assert!(r.degenerate_fit);
        assert_eq!((r.q_l, r.q_m, r.q_ivx), (0.0, 0.0, 0.0));
        assert_eq!(r.p_values.q_m, 1.0);
        assert_eq!(r.p_values.q_l, 1.0);
    }

    #[test]
    fn noiseless_recovery_of_beta() {
        let s = persistent_sample(150, 2, &[0.3, -0.2], 0.0, 2);
        let hyp = Hypothesis::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.3, -0.2]),
            Side::TwoSided,
        )
        .unwrap();
        let r = run_test(&s, &hyp, &IvxConfig::default()).unwrap();
        assert_relative_eq!(r.beta_l[0], 0.3, epsilon = 1e-10);
        assert_relative_eq!(r.beta_l[1], -0.2, epsilon = 1e-10);
        assert_eq!(r.p_values.q_m, 1.0);
    }

    #[test]
    fn marginal_report_satisfies_wald_t_identity() {
        let s = persistent_sample(200, 3, &[0.0, 0.05, 0.0], 1.0, 3);
        let hyp = Hypothesis::marginal(3, 0, Side::Right);
        let r = run_test(&s, &hyp, &IvxConfig::default()).unwrap();
        let tl = r.t_l.unwrap();
        let tm = r.t_m.unwrap();
        assert_relative_eq!(r.q_l, tl * tl, max_relative = 1e-9);
        assert_relative_eq!(r.q_m, tm * tm, max_relative = 1e-9);
        assert!(r.p_values.t_m.unwrap() >= 0.0 && r.p_values.t_m.unwrap() <= 1.0);
        assert!(r.q_vee <= r.q_l + 1e-10);
    }

    #[test]
    fn routes_to_beta_l_agree() {
        let s = persistent_sample(180, 3, &[0.1, 0.0, -0.1], 1.0, 4);
        let inst = Instruments::build(&s.x, &IvxConfig::default()).unwrap();
        let direct = beta_l(&s.y, &s.x, &inst.z_tilde).unwrap();
        let weighted = beta_l_weighted(&s.y, &s.x, &inst.z, &inst.s_a, &inst.s_b, inst.t0).unwrap();
        assert_relative_eq!(direct, weighted, max_relative = 1e-8);
    }

    #[test]
    fn validation_errors_surface() {
        let s = persistent_sample(5, 2, &[0.0, 0.0], 1.0, 5);
        let err = run_test(&s, &Hypothesis::joint(2), &IvxConfig::default()).unwrap_err();
        assert!(matches!(err, IvxError::Validation(_)));
        assert!(err.is_user_error());
    }
}
