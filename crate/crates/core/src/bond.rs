//! Forward rates, one-year excess returns and the CP / LN combination
//! factors built from monthly log discount-bond prices.
//!
//! With `p(n)_t` the log price of the `n`-year bond in month `t`:
//!
//! ```text
//! F1_t            = −p(1)_t
//! Fn_t            = p(n−1)_t − p(n)_t
//! rx(n)_{t+12}    = p(n−1)_{t+12} − p(n)_t + p(1)_t
//! rx̄_{t+12}       = mean over n = 2..N of rx(n)_{t+12}
//! ```
//!
//! CP is the slope part of the OLS fit of `rx̄_{t+12}` on `F_t`, and LN1 / LN2
//! are the slope parts of fits on `(M1, M1³, M3, M4, M8)` and
//! `(M1, M1³, M2, M3, M4, M8)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{IvxError, Result};
use crate::estimators::ols_fit;

/// Months between a forecast and the return it predicts.
pub const HORIZON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth {
                year: self.year + 1,
                month: 1,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month + 1,
            }
        }
    }
}

impl FromStr for YearMonth {
    type Err = IvxError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || IvxError::Invalid(format!("date '{s}' is not YYYY-MM"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(YearMonth { year, month })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Monthly panel of log prices for maturities `1..=N` years, with optional
/// macro factors `M1..M8` on the same dates.
#[derive(Debug, Clone, PartialEq)]
pub struct BondPanel {
    pub dates: Vec<YearMonth>,
    pub log_prices: DMatrix<f64>,
    pub macro_factors: Option<DMatrix<f64>>,
}

fn check_contiguous(dates: &[YearMonth]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] != w[0].next() {
            return Err(IvxError::Invalid(format!(
                "dates are not contiguous months: {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl BondPanel {
    pub fn new(
        dates: Vec<YearMonth>,
        log_prices: DMatrix<f64>,
        macro_factors: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if dates.len() != log_prices.nrows() {
            return Err(IvxError::Invalid(format!(
                "{} dates for {} price rows",
                dates.len(),
                log_prices.nrows()
            )));
        }
        if log_prices.ncols() == 0 {
            return Err(IvxError::MissingMaturity(1));
        }
        check_contiguous(&dates)?;
        if let Some(m) = &macro_factors {
            if m.nrows() != dates.len() || m.ncols() != 8 {
                return Err(IvxError::Invalid(format!(
                    "macro factors must be {} x 8, got {} x {}",
                    dates.len(),
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if log_prices.iter().any(|v| !v.is_finite()) {
            return Err(IvxError::Invalid("non-finite log price".into()));
        }
        Ok(BondPanel {
            dates,
            log_prices,
            macro_factors,
        })
    }

    pub fn months(&self) -> usize {
        self.dates.len()
    }

    pub fn maturities(&self) -> usize {
        self.log_prices.ncols()
    }

    /// Log price of the `n`-year bond in month `t` (`n` is 1-based).
    pub fn p(&self, t: usize, n: usize) -> f64 {
        self.log_prices[(t, n - 1)]
    }
}

struct Table {
    headers: Vec<String>,
    dates: Vec<YearMonth>,
    /// Row-major values for the non-date columns.
    rows: Vec<Vec<f64>>,
}

fn read_table<R: Read>(reader: R, what: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| IvxError::Invalid(format!("{what}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.first().map(String::as_str) != Some("date") {
        return Err(IvxError::MissingColumn(format!("date (first column of {what})")));
    }
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IvxError::Invalid(format!("{what}: {e}")))?;
        dates.push(rec[0].parse()?);
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    IvxError::Invalid(format!("{what}: row {} has non-numeric value '{v}'", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok(Table {
        headers: headers[1..].to_vec(),
        dates,
        rows,
    })
}

fn columns(t: &Table, names: &[String]) -> Result<DMatrix<f64>> {
    let idx = names
        .iter()
        .map(|n| {
            t.headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| IvxError::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(t.rows.len(), idx.len(), |r, c| t.rows[r][idx[c]]))
}

/// Reads `date, p1..pN`. Maturities must run from 1 without gaps.
pub fn read_prices<R: Read>(reader: R) -> Result<(Vec<YearMonth>, DMatrix<f64>)> {
    let t = read_table(reader, "price file")?;
    let mut mats: Vec<usize> = t
        .headers
        .iter()
        .filter_map(|h| h.strip_prefix('p').and_then(|n| n.parse().ok()))
        .collect();
    mats.sort_unstable();
    let n = mats.last().copied().unwrap_or(0);
    if let Some(missing) = (1..=n.max(1)).find(|m| !mats.contains(m)) {
        return Err(IvxError::MissingMaturity(missing));
    }
    let names: Vec<String> = (1..=n).map(|m| format!("p{m}")).collect();
    Ok((t.dates.clone(), columns(&t, &names)?))
}

/// Reads `date, M1..M8`.
pub fn read_macro<R: Read>(reader: R) -> Result<(Vec<YearMonth>, DMatrix<f64>)> {
    let t = read_table(reader, "macro file")?;
    let names: Vec<String> = (1..=8).map(|m| format!("M{m}")).collect();
    Ok((t.dates.clone(), columns(&t, &names)?))
}

pub fn load_panel<R: Read, M: Read>(prices: R, macro_file: Option<M>) -> Result<BondPanel> {
    let (dates, p) = read_prices(prices)?;
    let m = match macro_file {
        None => None,
        Some(r) => {
            let (md, m) = read_macro(r)?;
            if md != dates {
                return Err(IvxError::Invalid(
                    "macro file dates do not match price file dates".into(),
                ));
            }
            Some(m)
        }
    };
    BondPanel::new(dates, p, m)
}

/// Forward rates `F1..FN` (months × N).
pub fn forward_rates(panel: &BondPanel) -> DMatrix<f64> {
    let (t, n) = panel.log_prices.shape();
    DMatrix::from_fn(t, n, |r, c| {
        if c == 0 {
            -panel.p(r, 1)
        } else {
            panel.p(r, c) - panel.p(r, c + 1)
        }
    })
}

/// `rx(n)` indexed by realization month; the first `horizon` entries are `None`.
pub fn excess_returns(panel: &BondPanel, n: usize, horizon: usize) -> Result<Vec<Option<f64>>> {
    if n < 2 || n > panel.maturities() {
        return Err(IvxError::OutOfRange(format!(
            "maturity {n} not in 2..={}",
            panel.maturities()
        )));
    }
    let t = panel.months();
    if t <= horizon {
        return Err(IvxError::OutOfRange(format!(
            "panel has {t} months, need more than {horizon}"
        )));
    }
    Ok((0..t)
        .map(|r| {
            (r >= horizon).then(|| {
                let s = r - horizon;
                panel.p(r, n - 1) - panel.p(s, n) + panel.p(s, 1)
            })
        })
        .collect())
}

/// Average excess return over maturities `2..=N`, by realization month.
pub fn average_excess_return(panel: &BondPanel, horizon: usize) -> Result<Vec<Option<f64>>> {
    let n = panel.maturities();
    let all = (2..=n)
        .map(|m| excess_returns(panel, m, horizon))
        .collect::<Result<Vec<_>>>()?;
    let t = panel.months();
    Ok((0..t)
        .map(|r| {
            all.iter()
                .map(|s| s[r])
                .sum::<Option<f64>>()
                .map(|total| total / (n - 1) as f64)
        })
        .collect())
}

/// Fitted combination of predictors chosen to forecast `rx̄` one horizon ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub intercept: f64,
    pub slopes: DVector<f64>,
    /// `slopesᵀ x_t` for every month.
    pub series: Vec<f64>,
}

/// Regresses `rx̄_{t+h}` on row `t` of `regressors`, for `rx_bar` indexed by
/// realization month.
pub fn combination_factor(
    regressors: &DMatrix<f64>,
    rx_bar: &[Option<f64>],
    horizon: usize,
) -> Result<Combination> {
    let t = regressors.nrows();
    if rx_bar.len() != t {
        return Err(IvxError::Invalid(format!(
            "{} excess returns for {t} regressor rows",
            rx_bar.len()
        )));
    }
    let pairs: Vec<usize> = (0..t.saturating_sub(horizon))
        .filter(|&s| rx_bar[s + horizon].is_some())
        .collect();
    if pairs.len() <= regressors.ncols() + 1 {
        return Err(IvxError::OutOfRange(format!(
            "{} usable months for {} regressors",
            pairs.len(),
            regressors.ncols()
        )));
    }
    let y = DVector::from_iterator(pairs.len(), pairs.iter().map(|&s| rx_bar[s + horizon].unwrap()));
    let x = regressors.select_rows(&pairs);
    let fit = ols_fit(&y, &x)?;
    let series = (regressors * &fit.beta_hat).iter().copied().collect();
    Ok(Combination {
        intercept: fit.mu_hat,
        slopes: fit.beta_hat,
        series,
    })
}

pub fn cp_factor(forwards: &DMatrix<f64>, rx_bar: &[Option<f64>], horizon: usize) -> Result<Combination> {
    combination_factor(forwards, rx_bar, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LnSet {
    Ln1,
    Ln2,
}

impl LnSet {
    /// Regressor labels; `M1^3` is the cubed first factor.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            LnSet::Ln1 => &["M1", "M1^3", "M3", "M4", "M8"],
            LnSet::Ln2 => &["M1", "M1^3", "M2", "M3", "M4", "M8"],
        }
    }
}

/// Columns of the LN regressor set built from `M1..M8`.
pub fn ln_regressors(m: &DMatrix<f64>, which: LnSet) -> Result<DMatrix<f64>> {
    if m.ncols() < 8 {
        return Err(IvxError::MissingColumn(format!("M{}", m.ncols() + 1)));
    }
    let labels = which.labels();
    Ok(DMatrix::from_fn(m.nrows(), labels.len(), |r, c| match labels[c] {
        "M1^3" => m[(r, 0)].powi(3),
        l => m[(r, l[1..].parse::<usize>().unwrap() - 1)],
    }))
}

pub fn ln_factors(m: &DMatrix<f64>, rx_bar: &[Option<f64>], which: LnSet, horizon: usize) -> Result<Combination> {
    combination_factor(&ln_regressors(m, which)?, rx_bar, horizon)
}

/// Every constructed series for a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub dates: Vec<YearMonth>,
    pub forwards: DMatrix<f64>,
    /// `rx(2)..rx(N)` by realization month.
    pub excess: Vec<Vec<Option<f64>>>,
    pub cp: Vec<f64>,
    pub ln: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn build_factors(panel: &BondPanel) -> Result<FactorTable> {
    let forwards = forward_rates(panel);
    let excess = (2..=panel.maturities())
        .map(|n| excess_returns(panel, n, HORIZON))
        .collect::<Result<Vec<_>>>()?;
    let rx_bar = average_excess_return(panel, HORIZON)?;
    let cp = cp_factor(&forwards, &rx_bar, HORIZON)?.series;
    let ln = match &panel.macro_factors {
        None => None,
        Some(m) => Some((
            ln_factors(m, &rx_bar, LnSet::Ln1, HORIZON)?.series,
            ln_factors(m, &rx_bar, LnSet::Ln2, HORIZON)?.series,
        )),
    };
    Ok(FactorTable {
        dates: panel.dates.clone(),
        forwards,
        excess,
        cp,
        ln,
    })
}

/// Writes `date, F1..FN, rx2..rxN, CP[, LN1, LN2]`; missing returns are empty.
pub fn write_factors<W: Write>(table: &FactorTable, out: W) -> Result<()> {
    let io = |e: csv::Error| IvxError::Invalid(format!("CSV output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let n = table.forwards.ncols();
    let mut header = vec!["date".to_string()];
    header.extend((1..=n).map(|i| format!("F{i}")));
    header.extend((2..=n).map(|i| format!("rx{i}")));
    header.push("CP".into());
    if table.ln.is_some() {
        header.extend(["LN1".into(), "LN2".into()]);
    }
    w.write_record(&header).map_err(io)?;
    for (r, d) in table.dates.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(table.forwards.row(r).iter().map(|v| v.to_string()));
        rec.extend(table.excess.iter().map(|s| s[r].map(|v| v.to_string()).unwrap_or_default()));
        rec.push(table.cp[r].to_string());
        if let Some((l1, l2)) = &table.ln {
            rec.push(l1[r].to_string());
            rec.push(l2[r].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| IvxError::Invalid(format!("CSV output: {e}")))?;
    Ok(())
}
