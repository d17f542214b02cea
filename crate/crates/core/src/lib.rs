//! Walk-forward GDP growth forecasting with random forests and OLS.
//!
//! - [`timeseries`]: quarters, quarterly series, transforms, lagged design matrices
//! - [`forest`]: random-forest regression (bootstrap CART trees)
//! - [`ols`]: least squares with standard errors and bias tests
//! - [`backtest`]: expanding-window protocol and evaluation regressions
//! - [`data`]: CSV snapshots, frequency conversion, dataset manifests
//! - [`plot`]: SVG figures of actual vs predicted growth

pub mod backtest;
pub mod data;
pub mod distributions;
pub mod forest;
pub mod matrix;
pub mod ols;
pub mod plot;
pub mod timeseries;

pub use matrix::Matrix;
pub use timeseries::{LagSpec, Quarter, QuarterlySeries};
