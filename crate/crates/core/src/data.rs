//! Loading raw series snapshots and assembling a quarterly dataset.
//!
//! Every input file is a two-column CSV:
//!
//! ```text
//! period,value
//! 1990Q1,2.5
//! 1990Q2,
//! ```
//!
//! UTF-8, LF or CRLF line endings, header exactly `period,value`. Periods are
//! `YYYYQ[1-4]` for quarterly files or `YYYY-MM` for monthly files, and a
//! file declared with one frequency may not contain the other's periods.
//! Values are plain decimal literals (`-1.25`, `3`, `.5`) or empty for a
//! missing observation. Missing observations are kept by [`load_csv`] but
//! are an error once a series is converted: nothing is imputed.
//!
//! A dataset manifest is a TOML file with one `[[series]]` block per input:
//!
//! ```toml
//! country = "US"
//!
//! [[series]]
//! id = "tbill_3m"
//! file = "TB3MS.csv"          # relative to the manifest's directory
//! frequency = "monthly"       # or "quarterly"
//! aggregation = "average"     # monthly only: "average" or "last"
//! transform = "none"          # none | annualized_growth | pct_change
//!                             # | ratio_numerator | ratio_denominator
//! shift = 0                   # optional: re-date by this many quarters
//!
//! [[series]]
//! id = "private_debt"
//! file = "QUSPAM770A.csv"
//! frequency = "quarterly"
//! transform = "ratio_numerator"
//! ratio = "debt_gdp_ratio"    # output id shared by the numerator/denominator pair
//! ```
//!
//! Ratio inputs are consumed by their pair and do not appear in the
//! assembled dataset; the ratio appears under the `ratio` id instead.
//! Unknown keys are rejected.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::backtest::Dataset;
use crate::timeseries::{
    annualized_growth, pct_change, ratio_series, Quarter, QuarterlySeries, TimeSeriesError,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}:{line}: duplicate period {period}", path.display())]
    DuplicatePeriod {
        path: PathBuf,
        line: usize,
        period: String,
    },
    #[error("series `{series}`: quarter {quarter} is incomplete")]
    IncompleteQuarter { series: String, quarter: Quarter },
    #[error("series `{series}`: no observations between {after} and {before}")]
    Gap {
        series: String,
        after: String,
        before: String,
    },
    #[error("series `{series}`: missing value for {period}")]
    MissingValue { series: String, period: String },
    #[error("series `{series}` has no observations")]
    Empty { series: String },
    #[error("series `{series}`: expected {expected} data, found period {period}")]
    WrongFrequency {
        series: String,
        expected: Frequency,
        period: String,
    },
    #[error("manifest {}: {msg}", path.display())]
    Manifest { path: PathBuf, msg: String },
    #[error("series `{id}`: {source}")]
    Series {
        id: String,
        #[source]
        source: Box<DataError>,
    },
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Quarterly,
    Monthly,
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frequency::Quarterly => "quarterly",
            Frequency::Monthly => "monthly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Average,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    AnnualizedGrowth,
    PctChange,
    RatioNumerator,
    RatioDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Country {
    US,
    UK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    Quarter(Quarter),
    Month { year: i32, month: u8 },
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Period::Quarter(q) => write!(f, "{q}"),
            Period::Month { year, month } => write!(f, "{year}-{month:02}"),
        }
    }
}

impl Period {
    pub fn parse(text: &str) -> Option<Self> {
        if let Ok(q) = text.parse::<Quarter>() {
            return Some(Period::Quarter(q));
        }
        let (y, m) = text.split_once('-')?;
        if y.len() != 4 || m.len() != 2 || !(y.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit())) {
            return None;
        }
        let month: u8 = m.parse().ok()?;
        (1..=12).contains(&month).then(|| Period::Month {
            year: y.parse().expect("four digits"),
            month,
        })
    }

    fn frequency(self) -> Frequency {
        match self {
            Period::Quarter(_) => Frequency::Quarterly,
            Period::Month { .. } => Frequency::Monthly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObservation {
    pub period: Period,
    pub value: Option<f64>,
}

fn is_decimal_literal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    !(int.is_empty() && frac.is_empty()) && digits(int) && digits(frac)
}

/// Parses CSV text in the snapshot grammar. `source` names the file in errors.
pub fn parse_csv(text: &str, frequency: Frequency, source: &Path) -> Result<Vec<RawObservation>, DataError> {
    let csv_err = |line: usize, msg: String| DataError::Csv {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == "period,value" => {}
        _ => return Err(csv_err(1, "expected header `period,value`".into())),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let l = raw.strip_suffix('\r').unwrap_or(raw);
        if l.is_empty() {
            continue;
        }
        let Some((p, v)) = l.split_once(',') else {
            return Err(csv_err(line, format!("expected `period,value`, got `{l}`")));
        };
        if v.contains(',') {
            return Err(csv_err(line, "too many fields".into()));
        }
        let period = Period::parse(p).ok_or_else(|| csv_err(line, format!("invalid period `{p}`")))?;
        if period.frequency() != frequency {
            return Err(csv_err(
                line,
                format!("period `{p}` is not {frequency} but the file is declared {frequency}"),
            ));
        }
        let value = if v.is_empty() {
            None
        } else if is_decimal_literal(v) {
            Some(v.parse::<f64>().map_err(|_| csv_err(line, format!("invalid value `{v}`")))?)
        } else {
            return Err(csv_err(line, format!("invalid value `{v}`")));
        };
        if !seen.insert(period) {
            return Err(DataError::DuplicatePeriod {
                path: source.to_path_buf(),
                line,
                period: p.to_string(),
            });
        }
        out.push(RawObservation { period, value });
    }
    Ok(out)
}

pub fn load_csv(path: &Path, frequency: Frequency) -> Result<Vec<RawObservation>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, frequency, path)
}

/// Quarterly observations to a gap-free series.
pub fn quarterly_series(id: &str, obs: &[RawObservation]) -> Result<QuarterlySeries, DataError> {
    let mut by_quarter = BTreeMap::new();
    for o in obs {
        match o.period {
            Period::Quarter(q) => {
                by_quarter.insert(q, o.value);
            }
            p => {
                return Err(DataError::WrongFrequency {
                    series: id.into(),
                    expected: Frequency::Quarterly,
                    period: p.to_string(),
                })
            }
        }
    }
    let (&start, _) = by_quarter.first_key_value().ok_or_else(|| DataError::Empty { series: id.into() })?;
    let mut values = Vec::with_capacity(by_quarter.len());
    let mut prev: Option<Quarter> = None;
    for (&q, &v) in &by_quarter {
        if let Some(p) = prev {
            if q.diff(p) != 1 {
                return Err(DataError::Gap {
                    series: id.into(),
                    after: p.to_string(),
                    before: q.to_string(),
                });
            }
        }
        prev = Some(q);
        values.push(v.ok_or_else(|| DataError::MissingValue {
            series: id.into(),
            period: q.to_string(),
        })?);
    }
    Ok(QuarterlySeries::new(id, start, values)?)
}

/// Monthly observations to quarterly values: the mean of the quarter's three
/// months (`Average`, all three required) or its final month (`Last`).
pub fn monthly_to_quarterly(
    id: &str,
    obs: &[RawObservation],
    aggregation: Aggregation,
) -> Result<QuarterlySeries, DataError> {
    let mut months: BTreeMap<Quarter, [Option<f64>; 3]> = BTreeMap::new();
    for o in obs {
        let Period::Month { year, month } = o.period else {
            return Err(DataError::WrongFrequency {
                series: id.into(),
                expected: Frequency::Monthly,
                period: o.period.to_string(),
            });
        };
        let q = Quarter::new(year, (month - 1) / 3 + 1).expect("month in 1..=12");
        months.entry(q).or_default()[usize::from((month - 1) % 3)] = o.value;
    }
    let (&start, _) = months.first_key_value().ok_or_else(|| DataError::Empty { series: id.into() })?;
    let mut values = Vec::with_capacity(months.len());
    let mut prev: Option<Quarter> = None;
    for (&q, slots) in &months {
        if let Some(p) = prev {
            if q.diff(p) != 1 {
                return Err(DataError::Gap {
                    series: id.into(),
                    after: p.to_string(),
                    before: q.to_string(),
                });
            }
        }
        prev = Some(q);
        let incomplete = || DataError::IncompleteQuarter {
            series: id.into(),
            quarter: q,
        };
        let v = match aggregation {
            Aggregation::Average => {
                let [a, b, c] = *slots;
                (a.ok_or_else(incomplete)? + b.ok_or_else(incomplete)? + c.ok_or_else(incomplete)?) / 3.0
            }
            Aggregation::Last => slots[2].ok_or_else(incomplete)?,
        };
        values.push(v);
    }
    Ok(QuarterlySeries::new(id, start, values)?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesEntry {
    pub id: String,
    pub file: PathBuf,
    pub frequency: Frequency,
    #[serde(default)]
    pub transform: Transform,
    pub aggregation: Option<Aggregation>,
    /// Output id for ratio numerator/denominator pairs.
    pub ratio: Option<String>,
    #[serde(default)]
    pub shift: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub country: Country,
    pub entries: Vec<SeriesEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    country: Country,
    series: Vec<SeriesEntry>,
}

impl DatasetManifest {
    /// Parses a manifest; relative `file` paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, source: &Path) -> Result<Self, DataError> {
        let bad = |msg: String| DataError::Manifest {
            path: source.to_path_buf(),
            msg,
        };
        let file: ManifestFile = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut entries = file.series;
        for e in &mut entries {
            if e.file.is_relative() {
                e.file = base_dir.join(&e.file);
            }
        }
        let manifest = Self {
            country: file.country,
            entries,
        };
        manifest.validate().map_err(bad)?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    fn validate(&self) -> Result<(), String> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(format!("duplicate series id `{}`", e.id));
            }
            match (e.frequency, e.aggregation) {
                (Frequency::Monthly, None) => {
                    return Err(format!("monthly series `{}` needs an aggregation", e.id))
                }
                (Frequency::Quarterly, Some(_)) => {
                    return Err(format!("quarterly series `{}` cannot have an aggregation", e.id))
                }
                _ => {}
            }
            let is_ratio = matches!(e.transform, Transform::RatioNumerator | Transform::RatioDenominator);
            if is_ratio != e.ratio.is_some() {
                return Err(format!(
                    "series `{}`: `ratio` is required for ratio transforms and only allowed there",
                    e.id
                ));
            }
        }
        let mut pairs: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            if let Some(r) = &e.ratio {
                let slot = pairs.entry(r).or_default();
                match e.transform {
                    Transform::RatioNumerator => slot.0 += 1,
                    _ => slot.1 += 1,
                }
            }
        }
        for (r, counts) in pairs {
            if counts != (1, 1) {
                return Err(format!("ratio `{r}` needs exactly one numerator and one denominator"));
            }
            if ids.contains(r) {
                return Err(format!("ratio output `{r}` collides with a series id"));
            }
        }
        Ok(())
    }
}

fn load_entry(e: &SeriesEntry) -> Result<QuarterlySeries, DataError> {
    let obs = load_csv(&e.file, e.frequency)?;
    let series = match e.aggregation {
        Some(agg) => monthly_to_quarterly(&e.id, &obs, agg)?,
        None => quarterly_series(&e.id, &obs)?,
    };
    let series = match e.transform {
        Transform::AnnualizedGrowth => annualized_growth(&series)?,
        Transform::PctChange => pct_change(&series)?,
        Transform::None | Transform::RatioNumerator | Transform::RatioDenominator => series,
    };
    Ok(series.shifted(e.shift))
}

/// Loads every entry (concurrently) and joins ratio pairs.
pub fn assemble_dataset(manifest: &DatasetManifest) -> Result<Dataset, DataError> {
    let loaded: Vec<QuarterlySeries> = manifest
        .entries
        .par_iter()
        .map(|e| {
            load_entry(e).map_err(|source| DataError::Series {
                id: e.id.clone(),
                source: Box::new(source),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut dataset = Dataset::new();
    let mut numerators = BTreeMap::new();
    let mut denominators = BTreeMap::new();
    for (e, s) in manifest.entries.iter().zip(loaded) {
        match (e.transform, &e.ratio) {
            (Transform::RatioNumerator, Some(r)) => {
                numerators.insert(r.clone(), s);
            }
            (Transform::RatioDenominator, Some(r)) => {
                denominators.insert(r.clone(), s);
            }
            _ => {
                dataset.insert(e.id.clone(), s);
            }
        }
    }
    for (r, num) in numerators {
        let den = &denominators[&r];
        let ratio = ratio_series(&num, den).map_err(|source| DataError::Series {
            id: r.clone(),
            source: Box::new(source.into()),
        })?;
        dataset.insert(r.clone(), ratio.with_id(r));
    }
    Ok(dataset)
}

/// One line per series: `id start..end (n quarters)`.
pub fn describe_dataset(dataset: &Dataset) -> Vec<String> {
    dataset
        .values()
        .map(|s| format!("{} {}..{} ({} quarters)", s.id(), s.start(), s.end(), s.len()))
        .collect()
}
