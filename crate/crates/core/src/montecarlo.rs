//! Simulation of predictive-regression samples and the replication harness
//! behind size and power studies.
//!
//! Replication `i` of a run seeded with `s` draws from `ChaCha8Rng` seeded
//! with `s` on stream `i`, so results do not depend on how replications are
//! scheduled across threads.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IvxError, Result};
use crate::ivx::run_test;
use crate::model::{DgpSpec, GarchParams, Hypothesis, IvxConfig, PredictiveSample, TestReport};

/// GARCH(1,1) errors `u_t = h_t η_t` started at the unconditional variance.
pub fn simulate_garch_u(t_total: usize, garch: &GarchParams, eta: &[f64]) -> Result<Vec<f64>> {
    if !(garch.persistence() < 1.0) {
        return Err(IvxError::NonStationary {
            persistence: garch.persistence(),
        });
    }
    if !(garch.phi0 > 0.0) {
        return Err(IvxError::Invalid(format!("GARCH phi0 must be positive, got {}", garch.phi0)));
    }
    if eta.len() < t_total {
        return Err(IvxError::Invalid(format!(
            "need {t_total} innovations, got {}",
            eta.len()
        )));
    }
    let mut u = Vec::with_capacity(t_total);
    let mut h2 = garch.unconditional_variance();
    for (i, e) in eta.iter().take(t_total).enumerate() {
        if i > 0 {
            let prev = u[i - 1];
            h2 = garch.phi0 + garch.phi1 * h2 + garch.phi1_bar * prev * prev;
        }
        u.push(h2.sqrt() * e);
    }
    Ok(u)
}

pub fn simulate_dgp(spec: &DgpSpec, seed: u64) -> Result<PredictiveSample> {
    simulate_dgp_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `burn_in + T` periods (η_t first, then `v̌_{1..K,t}`), starting from
/// `x_0 = 0`, and keeps the last `T` predictor rows with the returns they
/// predict.
pub fn simulate_dgp_with_rng<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Result<PredictiveSample> {
    spec.check()?;
    let (t, k, burn) = (spec.t, spec.k, spec.burn_in);
    let n = burn + t;
    let rho = spec.rho();

    let mut eta = Vec::with_capacity(n + 1);
    let mut vcheck = DMatrix::<f64>::zeros(n + 1, k);
    eta.push(0.0);
    for s in 1..=n {
        eta.push(rng.sample(StandardNormal));
        for i in 0..k {
            vcheck[(s, i)] = rng.sample(StandardNormal);
        }
    }
    let u = simulate_garch_u(n, &spec.garch, &eta[1..])?;

    // x[s] for s = 0..=n, with x[0] = 0
    let mut x = DMatrix::zeros(n + 1, k);
    for s in 1..=n {
        for i in 0..k {
            x[(s, i)] = rho[i] * x[(s - 1, i)] + spec.gamma[i] * eta[s] + vcheck[(s, i)];
        }
    }
    let beta = DVector::from_column_slice(&spec.beta);
    let xs = x.rows(burn, t).into_owned();
    let y = DVector::from_fn(t, |r, _| {
        let s = burn + r + 1;
        spec.mu + xs.row(r).transpose().dot(&beta) + u[s - 1]
    });
    PredictiveSample::unlabeled(y, xs)
}

/// RNG for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Test statistics tracked by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "Q_ivx")]
    QIvx,
    #[serde(rename = "Q_l")]
    QL,
    #[serde(rename = "Q_m")]
    QM,
    #[serde(rename = "Q_l^t")]
    TL,
    #[serde(rename = "Q_m^t")]
    TM,
}

impl Statistic {
    pub const ALL: [Statistic; 5] = [
        Statistic::QIvx,
        Statistic::QL,
        Statistic::QM,
        Statistic::TL,
        Statistic::TM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::QIvx => "Q_ivx",
            Statistic::QL => "Q_l",
            Statistic::QM => "Q_m",
            Statistic::TL => "Q_l^t",
            Statistic::TM => "Q_m^t",
        }
    }

    /// p-value of this statistic in `report`, if it exists for the hypothesis.
    pub fn p_value(self, report: &TestReport) -> Option<f64> {
        let p = &report.p_values;
        match self {
            Statistic::QIvx => Some(p.q_ivx),
            Statistic::QL => Some(p.q_l),
            Statistic::QM => Some(p.q_m),
            Statistic::TL => p.t_l,
            Statistic::TM => p.t_m,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Statistic {
    type Err = IvxError;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| IvxError::Invalid(format!("unknown statistic '{s}'")))
    }
}

/// Worker-pool size for the harness. `None` uses rayon's global pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct Threads(pub Option<usize>);

impl Threads {
    pub fn install<T: Send>(self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.0 {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| IvxError::Invalid(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Runs `reps` replications and returns each outcome in replication order.
pub fn replicate(
    spec: &DgpSpec,
    hyp: &Hypothesis,
    cfg: &IvxConfig,
    reps: usize,
    seed: u64,
) -> Result<Vec<Result<TestReport>>> {
    spec.check()?;
    Ok((0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sample = simulate_dgp_with_rng(spec, &mut replication_rng(seed, rep))?;
            run_test(&sample, hyp, cfg)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub spec: DgpSpec,
    /// Human-readable form of `H0`.
    pub hypothesis: String,
    pub config: IvxConfig,
    pub replications: usize,
    pub failures: usize,
    pub level: f64,
    pub rejection_rate: BTreeMap<Statistic, f64>,
    pub monte_carlo_se: BTreeMap<Statistic, f64>,
    pub seed: u64,
}

impl SimulationSummary {
    pub fn rate(&self, s: Statistic) -> Option<f64> {
        self.rejection_rate.get(&s).copied()
    }

    pub fn se(&self, s: Statistic) -> Option<f64> {
        self.monte_carlo_se.get(&s).copied()
    }

    /// Replications that produced a report.
    pub fn completed(&self) -> usize {
        self.replications - self.failures
    }
}

pub fn describe_hypothesis(hyp: &Hypothesis) -> String {
    if hyp.is_joint_zero() {
        return "joint".into();
    }
    if let Some(i) = hyp.marginal_index() {
        if hyp.rhs[0] == 0.0 {
            return format!("marginal:{} ({})", i + 1, hyp.side);
        }
    }
    let rows: Vec<String> = hyp
        .restrictions
        .row_iter()
        .zip(hyp.rhs.iter())
        .map(|(r, v)| {
            let coefs: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            format!("[{}]·β = {v}", coefs.join(" "))
        })
        .collect();
    rows.join("; ")
}

/// Counts rejections (`p ≤ level`) among the successful outcomes.
pub fn summarize(
    outcomes: &[Result<TestReport>],
    spec: &DgpSpec,
    hyp: &Hypothesis,
    cfg: &IvxConfig,
    level: f64,
    seed: u64,
) -> Result<SimulationSummary> {
    let reps = outcomes.len();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures * 100 > reps {
        return Err(IvxError::TooManyFailures {
            failures,
            replications: reps,
        });
    }
    let ok = reps - failures;
    let mut rejection_rate = BTreeMap::new();
    let mut monte_carlo_se = BTreeMap::new();
    for stat in Statistic::ALL {
        let mut seen = 0usize;
        let mut rejected = 0usize;
        for r in outcomes.iter().flatten() {
            if let Some(p) = stat.p_value(r) {
                seen += 1;
                if p <= level {
                    rejected += 1;
                }
            }
        }
        if seen == 0 || ok == 0 {
            continue;
        }
        let p = rejected as f64 / seen as f64;
        rejection_rate.insert(stat, p);
        monte_carlo_se.insert(stat, (p * (1.0 - p) / seen as f64).sqrt());
    }
    Ok(SimulationSummary {
        spec: spec.clone(),
        hypothesis: describe_hypothesis(hyp),
        config: *cfg,
        replications: reps,
        failures,
        level,
        rejection_rate,
        monte_carlo_se,
        seed,
    })
}

pub fn rejection_rate(
    spec: &DgpSpec,
    hyp: &Hypothesis,
    cfg: &IvxConfig,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<SimulationSummary> {
    if reps == 0 {
        return Err(IvxError::Invalid("reps must be at least 1".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(IvxError::Invalid(format!("level must lie in (0, 1], got {level}")));
    }
    let outcomes = replicate(spec, hyp, cfg, reps, seed)?;
    summarize(&outcomes, spec, hyp, cfg, level, seed)
}

/// Coefficient vector for grid value `b`: the marginal coefficient for a
/// single-coefficient hypothesis, otherwise `b / ((1 + K) / 2)` on every
/// predictor.
pub fn beta_for_grid(b: f64, k: usize, hyp: &Hypothesis) -> Vec<f64> {
    match hyp.marginal_index() {
        Some(i) => {
            let mut beta = vec![0.0; k];
            beta[i] = b;
            beta
        }
        None => vec![b / ((1.0 + k as f64) / 2.0); k],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub scenario: String,
    pub b: f64,
    pub summary: SimulationSummary,
}

/// Cartesian product of scenarios and coefficient values. Every cell reuses
/// `seed`, so neighbouring cells share their random draws.
#[allow(clippy::too_many_arguments)]
pub fn size_power_grid(
    specs: &[(String, DgpSpec)],
    b_grid: &[f64],
    hyp: &Hypothesis,
    cfg: &IvxConfig,
    reps: usize,
    level: f64,
    seed: u64,
    mut progress: impl FnMut(&GridCell),
) -> Result<Vec<GridCell>> {
    if specs.is_empty() || b_grid.is_empty() {
        return Err(IvxError::Invalid("scenario and coefficient grids must be nonempty".into()));
    }
    let mut out = Vec::with_capacity(specs.len() * b_grid.len());
    for (name, base) in specs {
        for &b in b_grid {
            let mut spec = base.clone();
            spec.beta = beta_for_grid(b, spec.k, hyp);
            let summary = rejection_rate(&spec, hyp, cfg, reps, level, seed)?;
            let cell = GridCell {
                scenario: name.clone(),
                b,
                summary,
            };
            progress(&cell);
            out.push(cell);
        }
    }
    Ok(out)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`, using the
/// `(√n + 0.12 + 0.11/√n)·d` small-sample adjustment.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
