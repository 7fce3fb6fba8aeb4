//! Scenario files for the simulation harness and the CSV grid they produce.
//!
//! A scenario file is TOML with one table per scenario:
//!
//! ```toml
//! [k2_joint]
//! T = 250
//! alpha = 1
//! rho = [0.996, 0.993]        # or c = [...]
//! gamma = [-3.0, 2.0]
//! b = [0.0, 0.04, 0.08]       # or beta = [...] for a single cell
//! garch = { phi0 = 1.0, phi1 = 0.1, phi1_bar = 0.85 }
//! test = "joint"              # or "marginal:2"
//! side = "two"
//! reps = 1000
//! seed = 7
//! level = 0.05
//! ```
//!
//! Optional keys: `K`, `mu`, `burn_in`, `cz`, `delta`, `lambda`, and
//! `statistics` (a subset of `Q_ivx`, `Q_l`, `Q_m`, `Q_l^t`, `Q_m^t`).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IvxError, Result};
use crate::model::{DgpSpec, GarchParams, Hypothesis, IvxConfig, Side};
use crate::montecarlo::{beta_for_grid, rejection_rate, SimulationSummary, Statistic};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "K")]
    k: Option<usize>,
    alpha: u8,
    c: Option<Vec<f64>>,
    rho: Option<Vec<f64>>,
    gamma: Vec<f64>,
    beta: Option<Vec<f64>>,
    b: Option<Vec<f64>>,
    garch: Option<GarchParams>,
    mu: Option<f64>,
    burn_in: Option<usize>,
    test: Option<String>,
    side: Option<String>,
    reps: Option<usize>,
    seed: Option<u64>,
    level: Option<f64>,
    cz: Option<f64>,
    delta: Option<f64>,
    lambda: Option<f64>,
    statistics: Option<Vec<String>>,
}

/// Coefficient settings of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    /// Grid values mapped through [`beta_for_grid`].
    Grid(Vec<f64>),
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub spec: DgpSpec,
    pub coefficients: Coefficients,
    pub hypothesis: Hypothesis,
    pub config: IvxConfig,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub level: f64,
    pub statistics: Vec<Statistic>,
}

/// Parses `joint` or `marginal:i` (1-based).
pub fn parse_test(s: &str, k: usize, side: Side) -> Result<Hypothesis> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("joint") {
        if side != Side::TwoSided {
            return Err(IvxError::Invalid("a joint test must be two-sided".into()));
        }
        return Ok(Hypothesis::joint(k));
    }
    let idx = s
        .strip_prefix("marginal:")
        .and_then(|i| i.trim().parse::<usize>().ok())
        .ok_or_else(|| IvxError::Invalid(format!("test must be 'joint' or 'marginal:<i>', got '{s}'")))?;
    if idx == 0 || idx > k {
        return Err(IvxError::OutOfRange(format!("marginal index {idx} not in 1..={k}")));
    }
    Ok(Hypothesis::marginal(k, idx - 1, side))
}

impl Scenario {
    fn from_raw(name: &str, raw: RawScenario) -> Result<Self> {
        let invalid = |m: String| IvxError::Invalid(format!("scenario '{name}': {m}"));
        let k = raw.k.unwrap_or(raw.gamma.len());
        let c = match (raw.c, raw.rho) {
            (Some(c), None) => c,
            (None, Some(rho)) => DgpSpec::from_rho(raw.t, raw.alpha, &rho, &raw.gamma).c,
            _ => return Err(invalid("exactly one of 'c' and 'rho' is required".into())),
        };
        let coefficients = match (raw.beta, raw.b) {
            (Some(beta), None) => Coefficients::Fixed(beta),
            (None, Some(b)) if !b.is_empty() => Coefficients::Grid(b),
            (None, None) => Coefficients::Fixed(vec![0.0; k]),
            _ => return Err(invalid("give either 'beta' or a nonempty 'b' grid".into())),
        };
        let side: Side = raw.side.as_deref().unwrap_or("two").parse()?;
        let hypothesis = parse_test(raw.test.as_deref().unwrap_or("joint"), k, side)?;
        let defaults = IvxConfig::default();
        let config = IvxConfig {
            c_z: raw.cz,
            delta: raw.delta.unwrap_or(defaults.delta),
            lambda: raw.lambda.unwrap_or(defaults.lambda),
        };
        let spec = DgpSpec {
            t: raw.t,
            k,
            alpha: raw.alpha,
            c,
            gamma: raw.gamma,
            beta: match &coefficients {
                Coefficients::Fixed(b) => b.clone(),
                Coefficients::Grid(_) => vec![0.0; k],
            },
            mu: raw.mu.unwrap_or(1.0),
            garch: raw.garch.unwrap_or_default(),
            burn_in: raw.burn_in.unwrap_or(100),
        };
        spec.check().map_err(|e| invalid(e.to_string()))?;
        let statistics = match raw.statistics {
            None => Statistic::ALL.to_vec(),
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        };
        let level = raw.level.unwrap_or(0.05);
        if !(level > 0.0 && level <= 1.0) {
            return Err(invalid(format!("level must lie in (0, 1], got {level}")));
        }
        Ok(Scenario {
            name: name.to_string(),
            spec,
            coefficients,
            hypothesis,
            config,
            reps: raw.reps,
            seed: raw.seed,
            level,
            statistics,
        })
    }
}

/// Parses every scenario table, ordered by name.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let raw: BTreeMap<String, RawScenario> =
        toml::from_str(text).map_err(|e| IvxError::Invalid(format!("scenario file: {e}")))?;
    if raw.is_empty() {
        return Err(IvxError::Invalid("scenario file defines no scenarios".into()));
    }
    raw.into_iter().map(|(name, r)| Scenario::from_raw(&name, r)).collect()
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IvxError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    parse_scenarios(&text)
}

/// One output line: a statistic in one (scenario, b) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub scenario: String,
    pub statistic: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub b: Option<f64>,
    pub reps: usize,
    pub failures: usize,
    pub level: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub seed: u64,
}

/// Overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub reps: Option<usize>,
    pub seed: Option<u64>,
}

fn rows_for(sc: &Scenario, b: Option<f64>, s: &SimulationSummary) -> Vec<GridRow> {
    sc.statistics
        .iter()
        .filter_map(|&stat| {
            Some(GridRow {
                scenario: sc.name.clone(),
                statistic: stat.name().to_string(),
                t: sc.spec.t,
                k: sc.spec.k,
                b,
                reps: s.replications,
                failures: s.failures,
                level: s.level,
                rejection_rate: s.rate(stat)?,
                mc_se: s.se(stat)?,
                seed: s.seed,
            })
        })
        .collect()
}

/// Runs every cell of every scenario, calling `progress` after each cell.
pub fn run_scenarios(
    scenarios: &[Scenario],
    overrides: RunOverrides,
    mut progress: impl FnMut(&str, Option<f64>, &SimulationSummary),
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::new();
    for sc in scenarios {
        let reps = overrides
            .reps
            .or(sc.reps)
            .ok_or_else(|| IvxError::Invalid(format!("scenario '{}': reps not set", sc.name)))?;
        let seed = overrides
            .seed
            .or(sc.seed)
            .ok_or_else(|| IvxError::Invalid(format!("scenario '{}': seed not set", sc.name)))?;
        let cells: Vec<(Option<f64>, Vec<f64>)> = match &sc.coefficients {
            Coefficients::Fixed(beta) => vec![(None, beta.clone())],
            Coefficients::Grid(bs) => bs
                .iter()
                .map(|&b| (Some(b), beta_for_grid(b, sc.spec.k, &sc.hypothesis)))
                .collect(),
        };
        for (b, beta) in cells {
            let mut spec = sc.spec.clone();
            spec.beta = beta;
            let summary = rejection_rate(&spec, &sc.hypothesis, &sc.config, reps, sc.level, seed)?;
            progress(&sc.name, b, &summary);
            rows.extend(rows_for(sc, b, &summary));
        }
    }
    Ok(rows)
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| IvxError::Invalid(format!("CSV output: {e}")))?;
    }
    w.flush().map_err(|e| IvxError::Invalid(format!("CSV output: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
[smoke]
T = 60
alpha = 1
rho = [0.99, 0.95]
gamma = [-1.0, 0.5]
b = [0.0, 0.1]
test = "marginal:2"
side = "right"
reps = 5
seed = 3
statistics = ["Q_m^t"]
"#;

    #[test]
    fn parses_grid_scenario() {
        let sc = parse_scenarios(SMOKE).unwrap();
        assert_eq!(sc.len(), 1);
        let s = &sc[0];
        assert_eq!(s.spec.k, 2);
        assert!((s.spec.c[0] - 60.0 * (0.99 - 1.0)).abs() < 1e-12);
        assert_eq!(s.hypothesis.marginal_index(), Some(1));
        assert_eq!(s.hypothesis.side, Side::Right);
        assert_eq!(s.coefficients, Coefficients::Grid(vec![0.0, 0.1]));
        assert_eq!(s.statistics, vec![Statistic::TM]);
        assert_eq!(s.spec.garch, GarchParams::default());
    }

    #[test]
    fn rejects_unknown_keys_and_conflicts() {
        assert!(parse_scenarios("[a]\nT = 50\nalpha = 1\nrho = [0.9]\ngamma = [1.0]\nfoo = 1\n").is_err());
        assert!(parse_scenarios("[a]\nT = 50\nalpha = 1\nrho = [0.9]\nc = [-1.0]\ngamma = [1.0]\n").is_err());
        assert!(parse_scenarios("[a]\nT = 50\nalpha = 1\nrho = [0.9]\ngamma = [1.0]\ntest = \"joint\"\nside = \"right\"\n").is_err());
        assert!(parse_scenarios("").is_err());
    }

    #[test]
    fn one_cell_one_statistic_gives_one_row() {
        let text = SMOKE.replace("b = [0.0, 0.1]", "beta = [0.0, 0.0]");
        let sc = parse_scenarios(&text).unwrap();
        let rows = run_scenarios(&sc, RunOverrides { reps: Some(1), seed: None }, |_, _, _| {}).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].reps, 1);
        assert_eq!(rows[0].b, None);
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("scenario,statistic,T,K,b,reps,failures,level,rejection_rate,mc_se,seed\n"));
    }

    #[test]
    fn missing_reps_is_an_error() {
        let text = SMOKE.replace("reps = 5\n", "");
        let sc = parse_scenarios(&text).unwrap();
        assert!(run_scenarios(&sc, RunOverrides::default(), |_, _, _| {}).is_err());
    }
}
