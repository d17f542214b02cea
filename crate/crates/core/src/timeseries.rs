//! Calendar quarters, gap-free quarterly series, growth and ratio transforms,
//! and lagged design matrices.
//!
//! A [`DesignMatrix`] aligns a target series with lagged copies of a set of
//! feature series. Columns are laid out series-major and then by ascending
//! lag, so that column `s * n_lags + j` holds series `s` at lag `lags[j]`.
//! Random-forest candidate sampling draws column indices, so this layout is
//! part of the reproducibility contract.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeSeriesError {
    #[error("invalid quarter `{0}`: expected YYYYQn with n in 1..4")]
    Parse(String),
    #[error("series `{0}` is empty")]
    Empty(String),
    #[error("series `{series}` needs at least {needed} values, has {got}")]
    TooShort {
        series: String,
        needed: usize,
        got: usize,
    },
    #[error("series `{series}` has non-positive value {value} at {quarter}")]
    NonPositive {
        series: String,
        quarter: Quarter,
        value: f64,
    },
    #[error("series `{series}` has zero denominator at {quarter}")]
    ZeroDenominator { series: String, quarter: Quarter },
    #[error("series `{0}` and `{1}` do not overlap")]
    NoOverlap(String, String),
    #[error("series `{series}` has non-finite value at {quarter}")]
    NonFinite { series: String, quarter: Quarter },
    #[error("series `{series}` has no value for {quarter}")]
    Coverage { series: String, quarter: Quarter },
    #[error("invalid lag specification: {0}")]
    Lags(String),
    #[error("invalid target range {first}..{last}")]
    Range { first: Quarter, last: Quarter },
}

/// A calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quarter {
    year: i32,
    q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self, TimeSeriesError> {
        if !(1..=4).contains(&q) {
            return Err(TimeSeriesError::Parse(format!("{year}Q{q}")));
        }
        Ok(Self { year, q })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn q(self) -> u8 {
        self.q
    }

    /// Quarters elapsed since 0000Q1.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 4 + i64::from(self.q - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        let year = ord.div_euclid(4);
        let q = ord.rem_euclid(4) as u8 + 1;
        Self {
            year: i32::try_from(year).expect("quarter year out of range"),
            q,
        }
    }

    /// The quarter `n` quarters after `self` (before, for negative `n`).
    pub fn add(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Signed number of quarters from `other` to `self`.
    pub fn diff(self, other: Quarter) -> i64 {
        self.ordinal() - other.ordinal()
    }

    /// Inclusive iterator from `self` to `last`; empty when `last < self`.
    pub fn range_inclusive(self, last: Quarter) -> impl Iterator<Item = Quarter> {
        let n = (last.diff(self) + 1).max(0);
        (0..n).map(move |i| self.add(i))
    }
}

impl PartialOrd for Quarter {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Quarter {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.year, self.q).cmp(&(other.year, other.q))
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = TimeSeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimeSeriesError::Parse(s.to_string());
        let (year, q) = s.split_once('Q').ok_or_else(err)?;
        if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) || q.len() != 1 {
            return Err(err());
        }
        let year: i32 = year.parse().map_err(|_| err())?;
        let q: u8 = q.parse().map_err(|_| err())?;
        Quarter::new(year, q).map_err(|_| err())
    }
}

pub fn quarter_add(q: Quarter, n: i64) -> Quarter {
    q.add(n)
}

pub fn quarter_diff(a: Quarter, b: Quarter) -> i64 {
    a.diff(b)
}

pub fn parse_quarter(text: &str) -> Result<Quarter, TimeSeriesError> {
    text.parse()
}

pub fn format_quarter(q: Quarter) -> String {
    q.to_string()
}

/// Contiguous quarterly observations; value `i` belongs to `start + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterlySeries {
    id: String,
    start: Quarter,
    values: Vec<f64>,
}

impl QuarterlySeries {
    pub fn new(
        id: impl Into<String>,
        start: Quarter,
        values: Vec<f64>,
    ) -> Result<Self, TimeSeriesError> {
        let id = id.into();
        if values.is_empty() {
            return Err(TimeSeriesError::Empty(id));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TimeSeriesError::NonFinite {
                series: id,
                quarter: start.add(i as i64),
            });
        }
        Ok(Self { id, start, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> Quarter {
        self.start
    }

    pub fn end(&self) -> Quarter {
        self.start.add(self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, q: Quarter) -> Option<f64> {
        let i = q.diff(self.start);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }

    /// Like [`get`](Self::get) but reports the missing quarter.
    pub fn at(&self, q: Quarter) -> Result<f64, TimeSeriesError> {
        self.get(q).ok_or_else(|| TimeSeriesError::Coverage {
            series: self.id.clone(),
            quarter: q,
        })
    }

    pub fn covers(&self, first: Quarter, last: Quarter) -> bool {
        first >= self.start && last <= self.end()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Quarter, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.start.add(i as i64), v))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Re-dates every observation by `n` quarters.
    pub fn shifted(mut self, n: i64) -> Self {
        self.start = self.start.add(n);
        self
    }

    fn check_positive(&self, min_len: usize) -> Result<(), TimeSeriesError> {
        if self.len() < min_len {
            return Err(TimeSeriesError::TooShort {
                series: self.id.clone(),
                needed: min_len,
                got: self.len(),
            });
        }
        if let Some((quarter, value)) = self.iter().find(|&(_, v)| v <= 0.0) {
            return Err(TimeSeriesError::NonPositive {
                series: self.id.clone(),
                quarter,
                value,
            });
        }
        Ok(())
    }
}

/// Quarter-on-quarter growth compounded to an annual rate, in percent:
/// `((level_t / level_{t-1})^4 - 1) * 100`.
pub fn annualized_growth(levels: &QuarterlySeries) -> Result<QuarterlySeries, TimeSeriesError> {
    levels.check_positive(2)?;
    let values = levels
        .values
        .windows(2)
        .map(|w| ((w[1] / w[0]).powi(4) - 1.0) * 100.0)
        .collect();
    QuarterlySeries::new(levels.id.clone(), levels.start.add(1), values)
}

/// Simple quarter-on-quarter percentage change.
pub fn pct_change(series: &QuarterlySeries) -> Result<QuarterlySeries, TimeSeriesError> {
    series.check_positive(2)?;
    let values = series
        .values
        .windows(2)
        .map(|w| (w[1] / w[0] - 1.0) * 100.0)
        .collect();
    QuarterlySeries::new(series.id.clone(), series.start.add(1), values)
}

/// Element-wise `numerator / denominator` over the overlap of both ranges.
/// The result carries the numerator's id.
pub fn ratio_series(
    numerator: &QuarterlySeries,
    denominator: &QuarterlySeries,
) -> Result<QuarterlySeries, TimeSeriesError> {
    let first = numerator.start.max(denominator.start);
    let last = numerator.end().min(denominator.end());
    if last < first {
        return Err(TimeSeriesError::NoOverlap(
            numerator.id.clone(),
            denominator.id.clone(),
        ));
    }
    let mut values = Vec::with_capacity(last.diff(first) as usize + 1);
    for q in first.range_inclusive(last) {
        let den = denominator.at(q)?;
        if den == 0.0 {
            return Err(TimeSeriesError::ZeroDenominator {
                series: denominator.id.clone(),
                quarter: q,
            });
        }
        values.push(numerator.at(q)? / den);
    }
    QuarterlySeries::new(numerator.id.clone(), first, values)
}

/// Strictly increasing set of positive lags, in quarters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSpec {
    lags: Vec<u32>,
}

impl LagSpec {
    pub fn new(lags: Vec<u32>) -> Result<Self, TimeSeriesError> {
        if lags.is_empty() {
            return Err(TimeSeriesError::Lags("no lags given".into()));
        }
        if lags[0] == 0 {
            return Err(TimeSeriesError::Lags("lags must be >= 1".into()));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TimeSeriesError::Lags(format!(
                "lags must be strictly increasing, got {lags:?}"
            )));
        }
        Ok(Self { lags })
    }

    /// `first..=last`.
    pub fn range(first: u32, last: u32) -> Result<Self, TimeSeriesError> {
        Self::new((first..=last).collect())
    }

    pub fn lags(&self) -> &[u32] {
        &self.lags
    }

    pub fn min(&self) -> u32 {
        self.lags[0]
    }

    pub fn max(&self) -> u32 {
        *self.lags.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub target_quarters: Vec<Quarter>,
    pub y: Vec<f64>,
    pub x: Matrix,
    pub feature_names: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.x.cols()
    }
}

pub fn feature_names(features: &[QuarterlySeries], lag_spec: &LagSpec) -> Vec<String> {
    features
        .iter()
        .flat_map(|s| lag_spec.lags.iter().map(move |k| format!("{}_lag{k}", s.id)))
        .collect()
}

/// Feature row for `target`: every series at every lag, in column order.
///
/// `observe` is called with each (series id, quarter) read, which lets
/// callers audit for look-ahead.
pub fn feature_row_observed(
    features: &[QuarterlySeries],
    lag_spec: &LagSpec,
    target: Quarter,
    observe: &mut dyn FnMut(&str, Quarter),
) -> Result<Vec<f64>, TimeSeriesError> {
    let mut row = Vec::with_capacity(features.len() * lag_spec.len());
    for series in features {
        for &k in &lag_spec.lags {
            let q = target.add(-i64::from(k));
            observe(&series.id, q);
            row.push(series.at(q)?);
        }
    }
    Ok(row)
}

pub fn feature_row(
    features: &[QuarterlySeries],
    lag_spec: &LagSpec,
    target: Quarter,
) -> Result<Vec<f64>, TimeSeriesError> {
    feature_row_observed(features, lag_spec, target, &mut |_, _| {})
}

pub fn build_design_matrix(
    target: &QuarterlySeries,
    features: &[QuarterlySeries],
    lag_spec: &LagSpec,
    first_target: Quarter,
    last_target: Quarter,
) -> Result<DesignMatrix, TimeSeriesError> {
    build_design_matrix_observed(
        target,
        features,
        lag_spec,
        first_target,
        last_target,
        &mut |_, _| {},
    )
}

pub fn build_design_matrix_observed(
    target: &QuarterlySeries,
    features: &[QuarterlySeries],
    lag_spec: &LagSpec,
    first_target: Quarter,
    last_target: Quarter,
    observe: &mut dyn FnMut(&str, Quarter),
) -> Result<DesignMatrix, TimeSeriesError> {
    if last_target < first_target {
        return Err(TimeSeriesError::Range {
            first: first_target,
            last: last_target,
        });
    }
    // Report the earliest missing quarter per series before reading rows.
    for series in features {
        let need_first = first_target.add(-i64::from(lag_spec.max()));
        let need_last = last_target.add(-i64::from(lag_spec.min()));
        if need_first < series.start {
            return Err(TimeSeriesError::Coverage {
                series: series.id.clone(),
                quarter: need_first,
            });
        }
        if need_last > series.end() {
            return Err(TimeSeriesError::Coverage {
                series: series.id.clone(),
                quarter: series.end().add(1),
            });
        }
    }

    let n = last_target.diff(first_target) as usize + 1;
    let p = features.len() * lag_spec.len();
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut target_quarters = Vec::with_capacity(n);
    for q in first_target.range_inclusive(last_target) {
        y.push(target.at(q)?);
        data.extend(feature_row_observed(features, lag_spec, q, observe)?);
        target_quarters.push(q);
    }
    Ok(DesignMatrix {
        target_quarters,
        y,
        x: Matrix::from_row_major(n, p, data),
        feature_names: feature_names(features, lag_spec),
    })
}
