//! Value-at-Risk estimation for univariate time series.
//!
//! Two estimators share one forecasting contract: a batch quantile
//! autoregression fitted by exact pinball-loss minimization, and an online
//! learner that re-estimates the risk quantile on every new observation by
//! Metropolis-Hastings sampling of an aggregating quasi-posterior. Coverage
//! backtests (Kupiec and Christoffersen) validate either forecast path, and
//! the `ingest` module turns raw breach-report exports into the log series
//! the estimators consume.

pub mod backtest;
pub mod core;
pub mod cqar;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod qar;

pub use crate::core::{QuantileLevel, Series, Signal};
pub use crate::error::{Error, Result};
