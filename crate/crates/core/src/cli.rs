//! Command-line front end: `test`, `simulate` and `factors`.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 when
//! the data are numerically degenerate.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::bond::{build_factors, load_panel, write_factors};
use crate::error::{IvxError, Result};
use crate::ivx::run_test;
use crate::model::{Hypothesis, IvxConfig, PredictiveSample, Side, TestReport};
use crate::montecarlo::Threads;
use crate::scenario::{load_scenarios, run_scenarios, write_grid_csv, RunOverrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ivx", version, about = "Bias- and variance-corrected IVX tests for predictive regressions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test H0: Rβ = r on a CSV of returns and predictors.
    Test(TestArgs),
    /// Run Monte Carlo scenarios and write rejection rates as CSV.
    Simulate(SimulateArgs),
    /// Build forward rates, excess returns and CP/LN factors from bond prices.
    Factors(FactorsArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long, env = "IVX_DATA")]
    pub data: PathBuf,
    /// Return column.
    #[arg(long, env = "IVX_Y")]
    pub y: String,
    /// Predictor columns, comma separated.
    #[arg(long, env = "IVX_X", value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Joint test β = 0 (the default).
    #[arg(long, env = "IVX_JOINT", conflicts_with_all = ["marginal", "restrictions"])]
    pub joint: bool,
    /// Marginal test β_i = 0 for the named predictor.
    #[arg(long, env = "IVX_MARGINAL", conflicts_with = "restrictions")]
    pub marginal: Option<String>,
    /// CSV without header; each row holds one row of R followed by its r entry.
    #[arg(long, env = "IVX_RESTRICTIONS")]
    pub restrictions: Option<PathBuf>,
    #[arg(long, env = "IVX_SIDE", default_value = "two")]
    pub side: Side,
    #[arg(long, env = "IVX_CZ", allow_negative_numbers = true)]
    pub cz: Option<f64>,
    #[arg(long, env = "IVX_DELTA", default_value_t = 0.95)]
    pub delta: f64,
    #[arg(long, env = "IVX_LAMBDA", default_value_t = 0.5)]
    pub lambda: f64,
    /// Level used for the reject column of the table.
    #[arg(long, env = "IVX_LEVEL", default_value_t = 0.05)]
    pub level: f64,
    /// Rows between a predictor observation and the return it predicts.
    #[arg(long, env = "IVX_LAG", default_value_t = 1)]
    pub lag: usize,
    /// Write the JSON report here.
    #[arg(long, env = "IVX_OUT")]
    pub out: Option<PathBuf>,
    /// Print the JSON report to stdout instead of the table.
    #[arg(long, env = "IVX_JSON")]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "IVX_SCENARIO")]
    pub scenario: PathBuf,
    /// Overrides `reps` in every scenario.
    #[arg(long, env = "IVX_REPS")]
    pub reps: Option<usize>,
    /// Overrides `seed` in every scenario.
    #[arg(long, env = "IVX_SEED")]
    pub seed: Option<u64>,
    /// Output CSV; stdout when omitted.
    #[arg(long, env = "IVX_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "IVX_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FactorsArgs {
    #[arg(long, env = "IVX_PRICES")]
    pub prices: PathBuf,
    #[arg(long = "macro", env = "IVX_MACRO")]
    pub macro_file: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long, env = "IVX_OUT")]
    pub out: Option<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IvxError::Invalid(format!("cannot open {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let res = match path {
        Some(p) => std::fs::write(p, bytes),
        None => io::stdout().write_all(bytes),
    };
    res.map_err(|e| IvxError::Invalid(format!("cannot write output: {e}")))
}

/// Reads the named columns, pairing predictor row `r` with return row
/// `r + lag`. Empty cells mark missing values; pairs touching one are dropped
/// and the remaining pairs must be consecutive.
pub fn read_sample<R: Read>(reader: R, y: &str, xs: &[String], lag: usize) -> Result<PredictiveSample> {
    if lag == 0 {
        return Err(IvxError::Invalid("lag must be at least 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IvxError::Invalid(format!("data file: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IvxError::MissingColumn(name.to_string()))
    };
    let yi = find(y)?;
    let xi = xs.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let cell = |v: &str, row: usize, col: &str| -> Result<Option<f64>> {
        if v.is_empty() || v.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        v.parse::<f64>()
            .map(Some)
            .map_err(|_| IvxError::Invalid(format!("row {row}, column {col}: '{v}' is not a number")))
    };
    let mut ys = Vec::new();
    let mut xrows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IvxError::Invalid(format!("data file: {e}")))?;
        ys.push(cell(&rec[yi], i + 1, y)?);
        let row = xi
            .iter()
            .zip(xs)
            .map(|(&c, n)| cell(&rec[c], i + 1, n))
            .collect::<Result<Vec<_>>>()?;
        xrows.push(row.into_iter().collect::<Option<Vec<f64>>>());
    }
    let n = ys.len();
    let usable: Vec<usize> = (0..n.saturating_sub(lag))
        .filter(|&r| xrows[r].is_some() && ys[r + lag].is_some())
        .collect();
    if usable.is_empty() {
        return Err(IvxError::Invalid("no complete (predictor, return) pairs".into()));
    }
    if usable.last().unwrap() - usable[0] + 1 != usable.len() {
        return Err(IvxError::Invalid("missing values inside the sample window".into()));
    }
    let t = usable.len();
    let k = xs.len();
    let x = DMatrix::from_fn(t, k, |r, c| xrows[usable[r]].as_ref().unwrap()[c]);
    let yv = DVector::from_fn(t, |r, _| ys[usable[r] + lag].unwrap());
    PredictiveSample::new(yv, x, xs.to_vec())
}

/// Reads `R | r` rows from a headerless CSV.
pub fn read_restrictions<R: Read>(reader: R, k: usize, side: Side) -> Result<Hypothesis> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IvxError::Invalid(format!("restriction file: {e}")))?;
        let vals = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| IvxError::Invalid(format!("restriction file: '{v}' is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != k + 1 {
            return Err(IvxError::Invalid(format!(
                "restriction rows need K + 1 = {} entries, got {}",
                k + 1,
                vals.len()
            )));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(IvxError::Invalid("restriction file is empty".into()));
    }
    let j = rows.len();
    let r = DMatrix::from_fn(j, k, |i, c| rows[i][c]);
    let rhs = DVector::from_fn(j, |i, _| rows[i][k]);
    Hypothesis::new(r, rhs, side)
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Plain-text summary of a report.
pub fn render_table(report: &TestReport, level: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "T = {}, K = {}, J = {}, side = {}{}",
        report.t,
        report.k,
        report.j,
        report.side,
        if report.degenerate_fit { "  (exact fit under H0)" } else { "" }
    );
    let _ = writeln!(
        s,
        "c_z = {}, delta = {}, lambda = {}, rho_z = {:.6}, T0 = {}",
        report.config.c_z, report.config.delta, report.config.lambda, report.config.rho_z, report.config.t0
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>14} {:>10}  {:<4} {}", "statistic", "value", "p-value", "", format!("reject at {level}"));
    let p = &report.p_values;
    let mut rows = vec![
        ("Q_ivx", report.q_ivx, p.q_ivx),
        ("Q_l", report.q_l, p.q_l),
        ("Q_m", report.q_m, p.q_m),
    ];
    if let (Some(tl), Some(pl)) = (report.t_l, p.t_l) {
        rows.push(("Q_l^t", tl, pl));
    }
    if let (Some(tm), Some(pm)) = (report.t_m, p.t_m) {
        rows.push(("Q_m^t", tm, pm));
    }
    for (name, v, pv) in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>14.6} {:>10.4}  {:<4} {}",
            name,
            v,
            pv,
            stars(pv),
            if pv <= level { "yes" } else { "no" }
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>12} {:>12} {:>12} {:>9} {:>7} {:>9}",
        "predictor", "beta_ivx", "beta_l", "beta_m", "rho_hat", "w_z", "rho_uv*"
    );
    for i in 0..report.k {
        let label = report.labels.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1));
        let _ = writeln!(
            s,
            "{:<12} {:>12.6} {:>12.6} {:>12.6} {:>9.4} {:>7.4} {:>9.4}",
            label,
            report.beta_ivx[i],
            report.beta_l[i],
            report.beta_m[i],
            report.rho_hat[i],
            report.w_z[i],
            report.rho_uv_star[i]
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "* p < 0.10, ** p < 0.05, *** p < 0.01");
    s
}

pub fn report_json(report: &TestReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| IvxError::Invalid(format!("JSON output: {e}")))
}

pub fn cmd_test(a: &TestArgs) -> Result<()> {
    let sample = read_sample(open(&a.data)?, &a.y, &a.x, a.lag)?;
    let k = sample.k();
    let hyp = if let Some(path) = &a.restrictions {
        read_restrictions(open(path)?, k, a.side)?
    } else if let Some(name) = &a.marginal {
        let i = a
            .x
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| IvxError::MissingColumn(format!("{name} (not among --x)")))?;
        Hypothesis::marginal(k, i, a.side)
    } else {
        let mut h = Hypothesis::joint(k);
        h.side = a.side;
        h
    };
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(IvxError::Invalid(format!("level must lie in (0, 1), got {}", a.level)));
    }
    let cfg = IvxConfig {
        c_z: a.cz,
        delta: a.delta,
        lambda: a.lambda,
    };
    let report = run_test(&sample, &hyp, &cfg)?;
    let json = report_json(&report)?;
    if let Some(out) = &a.out {
        write_output(Some(out), json.as_bytes())?;
    }
    if a.json {
        write_output(None, json.as_bytes())
    } else {
        write_output(None, render_table(&report, a.level).as_bytes())
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scenarios = load_scenarios(&a.scenario)?;
    let overrides = RunOverrides {
        reps: a.reps,
        seed: a.seed,
    };
    let rows = Threads(a.threads).install(|| {
        run_scenarios(&scenarios, overrides, |name, b, s| {
            let cell = b.map(|b| format!(" b = {b}")).unwrap_or_default();
            eprintln!(
                "{name}{cell}: {} replications, {} failed",
                s.replications, s.failures
            );
        })
    })??;
    let mut buf = Vec::new();
    write_grid_csv(&rows, &mut buf)?;
    write_output(a.out.as_deref(), &buf)
}

pub fn cmd_factors(a: &FactorsArgs) -> Result<()> {
    let macro_reader = a.macro_file.as_deref().map(open).transpose()?;
    let panel = load_panel(open(&a.prices)?, macro_reader)?;
    let table = build_factors(&panel)?;
    let mut buf = Vec::new();
    write_factors(&table, &mut buf)?;
    write_output(a.out.as_deref(), &buf)
}

pub fn exit_code(e: &IvxError) -> i32 {
    if e.is_user_error() {
        EXIT_USER
    } else {
        EXIT_NUMERIC
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let res = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Factors(a) => cmd_factors(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.2), "");
    }

    #[test]
    fn sample_alignment_with_lag() {
        let csv = "date,r,a\n2000-01,,1\n2000-02,10,2\n2000-03,20,3\n2000-04,30,\n";
        let s = read_sample(csv.as_bytes(), "r", &["a".into()], 1).unwrap();
        assert_eq!(s.y.as_slice(), &[10.0, 20.0, 30.0]);
        assert_eq!(s.x.as_slice(), &[1.0, 2.0, 3.0]);
        let s = read_sample(csv.as_bytes(), "r", &["a".into()], 2).unwrap();
        assert_eq!(s.y.as_slice(), &[20.0, 30.0]);
        assert_eq!(s.x.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "r,a\n1,2\n";
        let err = read_sample(csv.as_bytes(), "r", &["b".into()], 1).unwrap_err();
        assert!(err.to_string().contains("column not found: b"));
        assert_eq!(exit_code(&err), EXIT_USER);
    }

    #[test]
    fn interior_gap_rejected() {
        let csv = "r,a\n1,1\n2,\n3,3\n4,4\n";
        assert!(read_sample(csv.as_bytes(), "r", &["a".into()], 1).is_err());
    }

    #[test]
    fn restriction_file() {
        let h = read_restrictions("1,-1,0\n0,1,0.5\n".as_bytes(), 2, Side::TwoSided).unwrap();
        assert_eq!(h.j(), 2);
        assert_eq!(h.rhs[1], 0.5);
        assert!(read_restrictions("1,2\n".as_bytes(), 2, Side::TwoSided).is_err());
    }

    #[test]
    fn numeric_failures_map_to_three() {
        assert_eq!(exit_code(&IvxError::Singular("x".into()).at("stage")), EXIT_NUMERIC);
        assert_eq!(exit_code(&IvxError::MissingMaturity(3)), EXIT_USER);
    }
}
