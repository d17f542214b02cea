//! Run specifications: one TOML file binding a dataset manifest, a backtest
//! configuration and output paths.
//!
//! ```toml
//! manifest = "../us/manifest.toml"     # relative paths resolve against this file
//!
//! [backtest]
//! train_start = "1970Q2"
//! first_predict = "1990Q2"
//! last_predict = "2016Q2"
//! model = "rf"                         # rf | ols
//! horizon = 6
//! lags = [6, 7]                        # optional; default is the country preset
//! target = "gdp_growth_third_estimate"
//! features = ["tbill_3m", "gov_bond_10y", "equity_pct_change", "debt_gdp_ratio"]
//!
//! [forest]                             # optional; defaults shown
//! n_trees = 500
//! min_node_size = 5
//! bootstrap = true
//! seed = 1
//! # mtry = 1                           # default max(1, p / 3)
//!
//! [spf]                                # optional survey benchmark series
//! h1 = "spf_mean_h1"
//! h3 = "spf_mean_h3"
//! window = "1970Q2:2016Q2"
//!
//! [report]                             # optional
//! seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
//! excerpt = "2008Q1:2009Q4"
//!
//! [output]
//! predictions = "../../out/us_h6_predictions.csv"
//! evaluation = "../../out/us_h6_evaluation.txt"   # optional
//! figure = "../../out/us_h6.svg"                  # optional
//! cache_dir = "../../out/cache/us_h6"             # optional
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use rforecast_core::backtest::{BacktestConfig, HorizonSpec, ModelKind};
use rforecast_core::data::{Country, DatasetManifest};
use rforecast_core::forest::ForestConfig;
use rforecast_core::{LagSpec, Quarter};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpecFile {
    manifest: PathBuf,
    backtest: BacktestSection,
    #[serde(default)]
    forest: ForestSection,
    spf: Option<SpfSection>,
    #[serde(default)]
    report: ReportSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BacktestSection {
    train_start: String,
    first_predict: String,
    last_predict: String,
    model: ModelKind,
    horizon: u32,
    lags: Option<Vec<u32>>,
    target: String,
    features: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestSection {
    #[serde(default = "default_trees")]
    n_trees: usize,
    mtry: Option<usize>,
    #[serde(default = "default_node_size")]
    min_node_size: usize,
    #[serde(default = "default_true")]
    bootstrap: bool,
    #[serde(default)]
    seed: u64,
}

impl Default for ForestSection {
    fn default() -> Self {
        Self {
            n_trees: default_trees(),
            mtry: None,
            min_node_size: default_node_size(),
            bootstrap: true,
            seed: 0,
        }
    }
}

fn default_trees() -> usize {
    ForestConfig::default().n_trees
}

fn default_node_size() -> usize {
    ForestConfig::default().min_node_size
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpfSection {
    pub h1: Option<String>,
    pub h3: Option<String>,
    pub window: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    seeds: Option<Vec<u64>>,
    excerpt: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    predictions: Option<PathBuf>,
    evaluation: Option<PathBuf>,
    figure: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
}

/// A validated run specification with every path resolved.
#[derive(Debug)]
pub struct RunSpec {
    pub manifest: DatasetManifest,
    pub backtest: BacktestConfig,
    pub spf: Option<SpfSection>,
    pub seeds: Option<Vec<u64>>,
    pub excerpt: Option<(Quarter, Quarter)>,
    pub predictions: Option<PathBuf>,
    pub evaluation: Option<PathBuf>,
    pub figure: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Whether `[backtest] lags` was given explicitly.
    explicit_lags: bool,
}

pub fn parse_quarter(s: &str) -> Result<Quarter, String> {
    s.parse().map_err(|e| format!("`{s}`: {e}"))
}

/// `YYYYQn:YYYYQn`, inclusive.
pub fn parse_window(s: &str) -> Result<(Quarter, Quarter), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("window `{s}` must look like 1990Q2:2016Q2"))?;
    let (first, last) = (parse_quarter(a)?, parse_quarter(b)?);
    if first > last {
        return Err(format!("window `{s}` ends before it starts"));
    }
    Ok((first, last))
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::RunSpec {
            path: path.to_path_buf(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let file: RunSpecFile = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));

        let manifest = DatasetManifest::load(&resolve(base, file.manifest))?;
        for entry in &manifest.entries {
            if !entry.file.is_file() {
                return Err(bad(format!(
                    "series `{}`: data file {} does not exist",
                    entry.id,
                    entry.file.display()
                )));
            }
        }

        let b = file.backtest;
        let explicit_lags = b.lags.is_some();
        let horizon = match b.lags {
            Some(lags) => {
                let spec = LagSpec::new(lags).map_err(|e| bad(e.to_string()))?;
                HorizonSpec::new(b.horizon, spec)
            }
            None => preset(manifest.country, b.horizon),
        }
        .map_err(|e| bad(e.to_string()))?;
        let f = file.forest;
        let backtest = BacktestConfig {
            train_start: parse_quarter(&b.train_start).map_err(bad)?,
            first_predict: parse_quarter(&b.first_predict).map_err(bad)?,
            last_predict: parse_quarter(&b.last_predict).map_err(bad)?,
            model: b.model,
            horizon,
            forest: ForestConfig {
                n_trees: f.n_trees,
                mtry: f.mtry,
                min_node_size: f.min_node_size,
                bootstrap: f.bootstrap,
                seed: f.seed,
            },
            target: b.target,
            features: b.features,
        };
        backtest.validate().map_err(|e| bad(e.to_string()))?;

        if let Some(spf) = &file.spf {
            if let Some(w) = &spf.window {
                parse_window(w).map_err(bad)?;
            }
        }
        if file.report.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(bad("[report] seeds must not be empty".into()));
        }
        let excerpt = file.report.excerpt.as_deref().map(parse_window).transpose().map_err(bad)?;
        let o = file.output;
        Ok(Self {
            manifest,
            backtest,
            spf: file.spf,
            seeds: file.report.seeds,
            excerpt,
            predictions: o.predictions.map(|p| resolve(base, p)),
            evaluation: o.evaluation.map(|p| resolve(base, p)),
            figure: o.figure.map(|p| resolve(base, p)),
            cache_dir: o.cache_dir.map(|p| resolve(base, p)),
            explicit_lags,
        })
    }

    /// Switches horizon. Explicit lag lists are kept only if still
    /// observable; otherwise, and for preset lags, the country preset for
    /// the new horizon is used.
    pub fn set_horizon(&mut self, horizon: u32) -> Result<(), CliError> {
        let current = self.backtest.horizon.lag_spec().clone();
        let spec = if self.explicit_lags && current.min() >= horizon {
            HorizonSpec::new(horizon, current)
        } else {
            preset(self.manifest.country, horizon)
        };
        self.backtest.horizon = spec?;
        Ok(())
    }
}

fn preset(country: Country, horizon: u32) -> Result<HorizonSpec, rforecast_core::backtest::BacktestError> {
    match country {
        Country::US => HorizonSpec::us_preset(horizon),
        Country::UK => HorizonSpec::uk_preset(horizon),
    }
}
