//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check: the split
//! oracle enumerates partitions in exact rational arithmetic and the OLS
//! oracle solves the normal equations exactly.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rforecast_core::backtest::{BacktestConfig, Dataset, HorizonSpec, ModelKind};
use rforecast_core::forest::ForestConfig;
use rforecast_core::{LagSpec, Matrix, Quarter, QuarterlySeries};

pub fn q(s: &str) -> Quarter {
    s.parse().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rat(v: f64) -> BigRational {
    BigRational::from_f64(v).expect("finite")
}

fn rat_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact SSE of a set: Σy² − (Σy)²/m.
fn exact_sse(ys: &[BigRational]) -> BigRational {
    if ys.is_empty() {
        return BigRational::zero();
    }
    let m = rat_int(ys.len() as i64);
    let sum: BigRational = ys.iter().cloned().sum();
    let sq: BigRational = ys.iter().map(|v| v * v).sum();
    sq - &sum * &sum / m
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    pub var: usize,
    pub value: f64,
    pub reduction: f64,
}

/// Every (variable, midpoint) pair, scored by exact parent SSE − left SSE −
/// right SSE. Ties go to the lowest variable, then the lowest threshold.
pub fn exhaustive_split(x: &Matrix, y: &[f64], vars: &[usize]) -> Option<OracleSplit> {
    let ys: Vec<BigRational> = y.iter().map(|&v| rat(v)).collect();
    let parent = exact_sse(&ys);
    let mut sorted_vars = vars.to_vec();
    sorted_vars.sort_unstable();
    let mut best: Option<(BigRational, usize, f64)> = None;
    for &var in &sorted_vars {
        let mut distinct: Vec<f64> = (0..x.rows()).map(|r| x.get(r, var)).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for w in distinct.windows(2) {
            let threshold = w[0] + (w[1] - w[0]) / 2.0;
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for r in 0..x.rows() {
                if x.get(r, var) <= w[0] {
                    left.push(ys[r].clone());
                } else {
                    right.push(ys[r].clone());
                }
            }
            let red = &parent - exact_sse(&left) - exact_sse(&right);
            if !red.is_positive() {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _, _)| red > *b) {
                best = Some((red, var, threshold));
            }
        }
    }
    best.map(|(red, var, value)| OracleSplit {
        var,
        value,
        reduction: red.to_f64().unwrap(),
    })
}

#[derive(Debug, Clone)]
pub struct OracleOls {
    /// Intercept first.
    pub beta: Vec<f64>,
    /// Intercept first.
    pub std_errors: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub residual_se: f64,
}

/// Solves (AᵀA) b = Aᵀy for A = [1 | X] in exact rationals.
pub fn normal_equations_ols(x: &Matrix, y: &[f64]) -> OracleOls {
    let n = y.len();
    let p = x.cols();
    let k = p + 1;
    let a: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            std::iter::once(rat_int(1))
                .chain((0..p).map(|c| rat(x.get(i, c))))
                .collect()
        })
        .collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| rat(v)).collect();

    // Augmented [AᵀA | Aᵀy | I].
    let width = 2 * k + 1;
    let mut m = vec![vec![BigRational::zero(); width]; k];
    for i in 0..k {
        for j in 0..k {
            m[i][j] = (0..n).map(|r| &a[r][i] * &a[r][j]).sum();
        }
        m[i][k] = (0..n).map(|r| &a[r][i] * &ys[r]).sum();
        m[i][k + 1 + i] = rat_int(1);
    }
    for col in 0..k {
        let pivot = (col..k).find(|&r| !m[r][col].is_zero()).expect("full rank");
        m.swap(col, pivot);
        let pv = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &pv;
        }
        for r in 0..k {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                let pivot_row = m[col].clone();
                for (v, pr) in m[r].iter_mut().zip(&pivot_row) {
                    *v = &*v - &f * pr;
                }
            }
        }
    }
    let beta: Vec<BigRational> = (0..k).map(|i| m[i][k].clone()).collect();
    let resid: Vec<BigRational> = (0..n)
        .map(|r| &ys[r] - (0..k).map(|c| &a[r][c] * &beta[c]).sum::<BigRational>())
        .collect();
    let sse: BigRational = resid.iter().map(|e| e * e).sum();
    let sst = exact_sse(&ys);
    let df = rat_int((n - k) as i64);
    let sigma2 = &sse / &df;
    let r2 = rat_int(1) - &sse / &sst;
    let adj = rat_int(1) - (rat_int(1) - &r2) * rat_int(n as i64 - 1) / &df;
    OracleOls {
        beta: beta.iter().map(|b| b.to_f64().unwrap()).collect(),
        std_errors: (0..k)
            .map(|i| (&sigma2 * &m[i][k + 1 + i]).to_f64().unwrap().sqrt())
            .collect(),
        r2: r2.to_f64().unwrap(),
        adj_r2: adj.to_f64().unwrap(),
        residual_se: sigma2.to_f64().unwrap().sqrt(),
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Dyadic values keep the exact oracle's rationals small.
pub fn dyadic(r: &mut impl Rng, lo: i64, hi: i64) -> f64 {
    r.random_range(lo * 64..hi * 64) as f64 / 64.0
}

/// The threshold data-generating process
/// `s_t = 0.8 s_{t-1} + e_t`, `y_t = 2 - 6·1[s_{t-3} > 1] + 0.5 η_t`,
/// with `n_total` target quarters starting at `first_target` and enough
/// feature history before it for lags up to `max_lag`.
pub fn threshold_dgp(seed: u64, first_target: Quarter, n_total: usize, max_lag: u32) -> Dataset {
    let mut r = rng(seed ^ 0x5eed_d9a7);
    let burn = 100usize;
    let lead = max_lag.max(3) as usize;
    let len = burn + lead + n_total;
    let mut s = vec![0.0f64; len];
    for t in 1..len {
        let e: f64 = r.sample(StandardNormal);
        s[t] = 0.8 * s[t - 1] + e;
    }
    let start_idx = burn;
    let start = first_target.add(-(lead as i64));
    let y: Vec<f64> = (start_idx + lead..len)
        .map(|t| {
            let eta: f64 = r.sample(StandardNormal);
            let step = if s[t - 3] > 1.0 { 1.0 } else { 0.0 };
            2.0 - 6.0 * step + 0.5 * eta
        })
        .collect();
    let mut ds = Dataset::new();
    ds.insert(
        "s".into(),
        QuarterlySeries::new("s", start, s[start_idx..].to_vec()).unwrap(),
    );
    ds.insert("y".into(), QuarterlySeries::new("y", first_target, y).unwrap());
    ds
}

/// Config for the threshold DGP: 200 training quarters then 60 walk-forward
/// predictions at h = 3 with lags 3..6.
pub fn threshold_config(model: ModelKind, seed: u64) -> BacktestConfig {
    let train_start = q("1950Q1");
    BacktestConfig {
        train_start,
        first_predict: train_start.add(200),
        last_predict: train_start.add(259),
        model,
        horizon: HorizonSpec::new(3, LagSpec::range(3, 6).unwrap()).unwrap(),
        forest: ForestConfig {
            seed,
            ..ForestConfig::default()
        },
        target: "y".into(),
        features: vec!["s".into()],
    }
}

/// A US-shaped synthetic dataset: four feature series from 1960Q1 and a
/// target from 1968Q1, both through 2016Q4.
pub fn us_shaped_dataset(seed: u64) -> Dataset {
    let mut r = rng(seed);
    let start = q("1960Q1");
    let n = q("2016Q4").diff(start) as usize + 1;
    let mut ds = Dataset::new();
    let ids = ["tbill_3m", "gov_bond_10y", "equity_pct_change", "debt_gdp_ratio"];
    for (k, id) in ids.iter().enumerate() {
        let mut v = Vec::with_capacity(n);
        let mut level = 3.0 + k as f64;
        for _ in 0..n {
            let e: f64 = r.sample(StandardNormal);
            level = 0.9 * level + 0.3 * e + 0.1 * (3.0 + k as f64);
            v.push(level);
        }
        ds.insert(id.to_string(), QuarterlySeries::new(*id, start, v).unwrap());
    }
    let tstart = q("1968Q1");
    let m = q("2016Q4").diff(tstart) as usize + 1;
    let y: Vec<f64> = (0..m)
        .map(|i| {
            let e: f64 = r.sample(StandardNormal);
            let lagged = ds["tbill_3m"].get(tstart.add(i as i64 - 3)).unwrap();
            2.5 - 0.4 * (lagged - 3.0) + 2.0 * e
        })
        .collect();
    ds.insert(
        "gdp_growth_third_estimate".into(),
        QuarterlySeries::new("gdp_growth_third_estimate", tstart, y).unwrap(),
    );
    ds
}

pub fn us_config(model: ModelKind, horizon: u32, seed: u64) -> BacktestConfig {
    BacktestConfig {
        train_start: q("1970Q2"),
        first_predict: q("1990Q2"),
        last_predict: q("2016Q2"),
        model,
        horizon: HorizonSpec::us_preset(horizon).unwrap(),
        forest: ForestConfig {
            seed,
            ..ForestConfig::default()
        },
        target: "gdp_growth_third_estimate".into(),
        features: ["tbill_3m", "gov_bond_10y", "equity_pct_change", "debt_gdp_ratio"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}
