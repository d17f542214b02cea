//! Expanding-window walk-forward backtests and forecast-evaluation
//! regressions.
//!
//! For every predicted quarter `T` in `first_predict..=last_predict` the
//! model is refit on targets `train_start..=T-1` and applied to the feature
//! row of `T`. Training targets always run through `T-1`, for every horizon.
//! For horizons above one this uses targets that would not yet have been
//! published at the true forecast origin; only the features respect the
//! horizon through the lag specification (`min(lags) >= horizon`).
//!
//! Evaluation regresses actual outcomes (left-hand side) on predictions,
//! with an intercept.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{Forest, ForestConfig, ForestError};
use crate::ols::{bias_test, fit_ols, fit_simple, slope_p_value, BiasTest, OlsError, OlsFit};
use crate::timeseries::{
    build_design_matrix_observed, feature_row_observed, LagSpec, Quarter, QuarterlySeries,
    TimeSeriesError,
};

pub type Dataset = BTreeMap<String, QuarterlySeries>;

pub const RECORD_CSV_HEADER: &str = "quarter,predicted,actual,train_window_end";

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest configuration: {0}")]
    Config(String),
    #[error("dataset has no series `{0}`")]
    MissingSeries(String),
    #[error("series `{series}` does not cover {quarter}")]
    Coverage { series: String, quarter: Quarter },
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
    #[error("random forest for {quarter}: {source}")]
    Forest {
        quarter: Quarter,
        #[source]
        source: ForestError,
    },
    #[error("linear model for {quarter}: {source}")]
    Linear {
        quarter: Quarter,
        #[source]
        source: OlsError,
    },
    #[error("evaluation regression failed: {0}")]
    Evaluation(#[from] OlsError),
    #[error("need at least 4 predictions to evaluate, got {0}")]
    TooFewRecords(usize),
    #[error("all {n} predictions equal {value}; a constant forecast series cannot be regressed on (the evaluation design would be singular)")]
    ConstantPredictions { n: usize, value: f64 },
    #[error("invalid range {first}..{last}")]
    Range { first: Quarter, last: Quarter },
    #[error("predictions CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("model cache {path}: {msg}")]
    Cache { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "ols")]
    OlsLinear,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "rf",
            ModelKind::OlsLinear => "ols",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" | "random_forest" => Ok(Self::RandomForest),
            "ols" | "ols_linear" => Ok(Self::OlsLinear),
            other => Err(format!("unknown model `{other}` (expected rf or ols)")),
        }
    }
}

/// Forecast horizon plus the lags usable at that horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSpec {
    horizon: u32,
    lag_spec: LagSpec,
}

impl HorizonSpec {
    pub fn new(horizon: u32, lag_spec: LagSpec) -> Result<Self, BacktestError> {
        if horizon == 0 {
            return Err(BacktestError::Config("horizon must be >= 1".into()));
        }
        if lag_spec.min() < horizon {
            return Err(BacktestError::Config(format!(
                "lag {} is not observable {horizon} quarters ahead",
                lag_spec.min()
            )));
        }
        Ok(Self { horizon, lag_spec })
    }

    /// US lag windows: h=1 → 1..4, h=3 → 3..6, h=6 → 6..7.
    pub fn us_preset(horizon: u32) -> Result<Self, BacktestError> {
        let lags = match horizon {
            1 => LagSpec::range(1, 4)?,
            3 => LagSpec::range(3, 6)?,
            6 => LagSpec::range(6, 7)?,
            h => return Err(BacktestError::Config(format!("no US preset for horizon {h}"))),
        };
        Self::new(horizon, lags)
    }

    /// UK lag windows: four lags starting at the horizon. The h=6 window
    /// (6..9) is inferred, not documented by the original study.
    pub fn uk_preset(horizon: u32) -> Result<Self, BacktestError> {
        match horizon {
            1 | 3 | 6 => Self::new(horizon, LagSpec::range(horizon, horizon + 3)?),
            h => Err(BacktestError::Config(format!("no UK preset for horizon {h}"))),
        }
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn lag_spec(&self) -> &LagSpec {
        &self.lag_spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub train_start: Quarter,
    pub first_predict: Quarter,
    pub last_predict: Quarter,
    pub model: ModelKind,
    pub horizon: HorizonSpec,
    pub forest: ForestConfig,
    pub target: String,
    pub features: Vec<String>,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if !(self.train_start < self.first_predict && self.first_predict <= self.last_predict) {
            return Err(BacktestError::Config(format!(
                "need train_start < first_predict <= last_predict, got {} / {} / {}",
                self.train_start, self.first_predict, self.last_predict
            )));
        }
        if self.features.is_empty() {
            return Err(BacktestError::Config("no feature series".into()));
        }
        Ok(())
    }

    pub fn n_windows(&self) -> usize {
        (self.last_predict.diff(self.first_predict) + 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub quarter: Quarter,
    pub predicted: f64,
    pub actual: f64,
    pub train_window_end: Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecessionFlag {
    pub quarter: Quarter,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub fit: OlsFit,
    pub bias: BiasTest,
    pub n: usize,
    pub slope_p: f64,
    pub recession_flags: Vec<RecessionFlag>,
}

impl EvaluationReport {
    pub fn slope(&self) -> f64 {
        self.fit.coefficients[0]
    }

    pub fn slope_se(&self) -> f64 {
        self.fit.std_errors[1]
    }

    pub fn intercept(&self) -> f64 {
        self.fit.intercept
    }

    pub fn intercept_se(&self) -> f64 {
        self.fit.std_errors[0]
    }
}

/// A feature value read while building the inputs for one predicted quarter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRead {
    pub predicted: Quarter,
    pub series: String,
    pub read: Quarter,
}

/// Every feature read a backtest made, and those that looked past
/// `T - min(lags)` for predicted quarter `T`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LookAheadAudit {
    pub reads: usize,
    pub violations: Vec<FeatureRead>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for cached per-window forests, keyed by a fingerprint of
    /// the training data and configuration.
    pub cache_dir: Option<PathBuf>,
}

/// Seed for the forest predicting `quarter`; depends only on the master
/// seed and the quarter, so extending a run never perturbs earlier windows.
pub fn window_seed(master: u64, quarter: Quarter) -> u64 {
    splitmix64(master ^ splitmix64(quarter.ordinal() as u64))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lookup<'a>(dataset: &'a Dataset, id: &str) -> Result<&'a QuarterlySeries, BacktestError> {
    dataset
        .get(id)
        .ok_or_else(|| BacktestError::MissingSeries(id.to_string()))
}

fn require_cover(series: &QuarterlySeries, first: Quarter, last: Quarter) -> Result<(), BacktestError> {
    let missing = if first < series.start() {
        Some(first)
    } else if last > series.end() {
        Some(series.end().add(1))
    } else {
        None
    };
    match missing {
        Some(quarter) => Err(BacktestError::Coverage {
            series: series.id().to_string(),
            quarter,
        }),
        None => Ok(()),
    }
}

pub fn run_backtest(config: &BacktestConfig, dataset: &Dataset) -> Result<Vec<PredictionRecord>, BacktestError> {
    run_backtest_with(config, dataset, &RunOptions::default()).map(|(r, _)| r)
}

/// Runs the backtest and also returns the look-ahead audit.
pub fn run_backtest_with(
    config: &BacktestConfig,
    dataset: &Dataset,
    options: &RunOptions,
) -> Result<(Vec<PredictionRecord>, LookAheadAudit), BacktestError> {
    config.validate()?;
    let lags = config.horizon.lag_spec();
    let target = lookup(dataset, &config.target)?;
    let features: Vec<QuarterlySeries> = config
        .features
        .iter()
        .map(|id| lookup(dataset, id).cloned())
        .collect::<Result<_, _>>()?;

    require_cover(target, config.train_start, config.last_predict)?;
    let feat_first = config.train_start.add(-i64::from(lags.max()));
    let feat_last = config.last_predict.add(-i64::from(lags.min()));
    for f in &features {
        require_cover(f, feat_first, feat_last)?;
    }
    if let Some(dir) = &options.cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| BacktestError::Cache {
            path: dir.clone(),
            msg: e.to_string(),
        })?;
    }

    let quarters: Vec<Quarter> = config
        .first_predict
        .range_inclusive(config.last_predict)
        .collect();
    let windows: Vec<(PredictionRecord, usize, Vec<FeatureRead>)> = quarters
        .par_iter()
        .map(|&t| run_window(config, target, &features, t, options))
        .collect::<Result<_, _>>()?;

    let mut audit = LookAheadAudit::default();
    let mut records = Vec::with_capacity(windows.len());
    for (rec, reads, violations) in windows {
        records.push(rec);
        audit.reads += reads;
        audit.violations.extend(violations);
    }
    Ok((records, audit))
}

fn run_window(
    config: &BacktestConfig,
    target: &QuarterlySeries,
    features: &[QuarterlySeries],
    t: Quarter,
    options: &RunOptions,
) -> Result<(PredictionRecord, usize, Vec<FeatureRead>), BacktestError> {
    let lags = config.horizon.lag_spec();
    let latest_allowed = t.add(-i64::from(lags.min()));
    let mut reads = 0usize;
    let mut violations = Vec::new();
    let mut observe = |series: &str, q: Quarter| {
        reads += 1;
        if q > latest_allowed {
            violations.push(FeatureRead {
                predicted: t,
                series: series.to_string(),
                read: q,
            });
        }
    };

    let train_end = t.add(-1);
    let design = build_design_matrix_observed(
        target,
        features,
        lags,
        config.train_start,
        train_end,
        &mut observe,
    )?;
    let row = feature_row_observed(features, lags, t, &mut observe)?;

    let predicted = match config.model {
        ModelKind::RandomForest => {
            let forest_config = ForestConfig {
                seed: window_seed(config.forest.seed, t),
                ..config.forest.clone()
            };
            let forest = match &options.cache_dir {
                Some(dir) => cached_forest(dir, &forest_config, &design.x, &design.y, t)?,
                None => Forest::fit(&forest_config, &design.x, &design.y)
                    .map_err(|source| BacktestError::Forest { quarter: t, source })?,
            };
            forest
                .predict(&row)
                .map_err(|source| BacktestError::Forest { quarter: t, source })?
        }
        ModelKind::OlsLinear => fit_ols(&design.x, &design.y)
            .map_err(|source| BacktestError::Linear { quarter: t, source })?
            .predict(&row),
    };

    let record = PredictionRecord {
        quarter: t,
        predicted,
        actual: target.at(t)?,
        train_window_end: train_end,
    };
    Ok((record, reads, violations))
}

fn fingerprint(config: &ForestConfig, x: &crate::Matrix, y: &[f64]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(config.n_trees as u64);
    eat(config.mtry.map_or(u64::MAX, |m| m as u64));
    eat(config.min_node_size as u64);
    eat(u64::from(config.bootstrap));
    eat(config.seed);
    eat(x.rows() as u64);
    eat(x.cols() as u64);
    x.as_slice().iter().chain(y).for_each(|v| eat(v.to_bits()));
    h
}

fn cached_forest(
    dir: &Path,
    config: &ForestConfig,
    x: &crate::Matrix,
    y: &[f64],
    t: Quarter,
) -> Result<Forest, BacktestError> {
    let path = dir.join(format!("rf-{t}-{:016x}.forest", fingerprint(config, x, y)));
    let cache_err = |msg: String| BacktestError::Cache {
        path: path.clone(),
        msg,
    };
    if let Ok(text) = std::fs::read_to_string(&path) {
        return Forest::from_text(&text).map_err(|e| cache_err(e.to_string()));
    }
    let forest =
        Forest::fit(config, x, y).map_err(|source| BacktestError::Forest { quarter: t, source })?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, forest.to_text())
        .and_then(|_| std::fs::rename(&tmp, &path))
        .map_err(|e| cache_err(e.to_string()))?;
    Ok(forest)
}

/// Predictions strictly below `threshold`, in quarter order.
pub fn recession_flags(records: &[PredictionRecord], threshold: f64) -> Vec<RecessionFlag> {
    let mut flags: Vec<RecessionFlag> = records
        .iter()
        .filter(|r| r.predicted < threshold)
        .map(|r| RecessionFlag {
            quarter: r.quarter,
            predicted: r.predicted,
            actual: r.actual,
        })
        .collect();
    flags.sort_by_key(|f| f.quarter);
    flags
}

fn evaluate_pairs(
    quarters: &[Quarter],
    predicted: &[f64],
    actual: &[f64],
) -> Result<EvaluationReport, BacktestError> {
    let n = predicted.len();
    if n < 4 {
        return Err(BacktestError::TooFewRecords(n));
    }
    if predicted.iter().all(|&p| p == predicted[0]) {
        return Err(BacktestError::ConstantPredictions {
            n,
            value: predicted[0],
        });
    }
    let fit = fit_simple(predicted, actual)?;
    let bias = bias_test(&fit)?;
    let slope_p = slope_p_value(&fit)?;
    let mut recession_flags: Vec<RecessionFlag> = quarters
        .iter()
        .zip(predicted.iter().zip(actual))
        .filter(|(_, (&p, _))| p < 0.0)
        .map(|(&quarter, (&predicted, &actual))| RecessionFlag {
            quarter,
            predicted,
            actual,
        })
        .collect();
    recession_flags.sort_by_key(|f| f.quarter);
    Ok(EvaluationReport {
        fit,
        bias,
        n,
        slope_p,
        recession_flags,
    })
}

/// Regresses actual on predicted over all records.
pub fn evaluate(records: &[PredictionRecord]) -> Result<EvaluationReport, BacktestError> {
    let quarters: Vec<Quarter> = records.iter().map(|r| r.quarter).collect();
    let predicted: Vec<f64> = records.iter().map(|r| r.predicted).collect();
    let actual: Vec<f64> = records.iter().map(|r| r.actual).collect();
    evaluate_pairs(&quarters, &predicted, &actual)
}

fn window_values(
    series: &QuarterlySeries,
    first: Quarter,
    last: Quarter,
) -> Result<Vec<f64>, BacktestError> {
    if last < first {
        return Err(BacktestError::Range { first, last });
    }
    require_cover(series, first, last)?;
    Ok(first.range_inclusive(last).map(|q| series.get(q).expect("covered")).collect())
}

/// Regresses `actual` on a survey mean forecast, both indexed by the
/// quarter being forecast, over `first..=last`.
pub fn spf_benchmark(
    spf_mean: &QuarterlySeries,
    actual: &QuarterlySeries,
    first: Quarter,
    last: Quarter,
) -> Result<EvaluationReport, BacktestError> {
    let predicted = window_values(spf_mean, first, last)?;
    let outcomes = window_values(actual, first, last)?;
    let quarters: Vec<Quarter> = first.range_inclusive(last).collect();
    evaluate_pairs(&quarters, &predicted, &outcomes)
}

pub fn spf_negative_growth_count(
    spf_mean: &QuarterlySeries,
    first: Quarter,
    last: Quarter,
) -> Result<usize, BacktestError> {
    Ok(window_values(spf_mean, first, last)?
        .into_iter()
        .filter(|&v| v < 0.0)
        .count())
}

/// US recession-adjacent windows used to check recession flags:
/// 1990Q3–1991Q2, 2001Q1–2001Q4, 2008Q3–2009Q4.
pub fn us_recession_windows() -> [(Quarter, Quarter); 3] {
    let q = |y, n| Quarter::new(y, n).expect("valid quarter");
    [
        (q(1990, 3), q(1991, 2)),
        (q(2001, 1), q(2001, 4)),
        (q(2008, 3), q(2009, 4)),
    ]
}

pub fn in_windows(quarter: Quarter, windows: &[(Quarter, Quarter)]) -> bool {
    windows.iter().any(|&(a, b)| a <= quarter && quarter <= b)
}

pub fn records_to_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            r.quarter, r.predicted, r.actual, r.train_window_end
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<PredictionRecord>, BacktestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == RECORD_CSV_HEADER => {}
        _ => {
            return Err(BacktestError::Csv {
                line: 1,
                msg: format!("expected header `{RECORD_CSV_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let l = raw.trim_end_matches('\r');
        if l.is_empty() {
            continue;
        }
        let err = |msg: String| BacktestError::Csv { line, msg };
        let fields: Vec<&str> = l.split(',').collect();
        let [q, p, a, w] = fields.as_slice() else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("invalid number `{s}`")))
        };
        out.push(PredictionRecord {
            quarter: q.parse().map_err(|e: TimeSeriesError| err(e.to_string()))?,
            predicted: num(p)?,
            actual: num(a)?,
            train_window_end: w.parse().map_err(|e: TimeSeriesError| err(e.to_string()))?,
        });
    }
    Ok(out)
}
