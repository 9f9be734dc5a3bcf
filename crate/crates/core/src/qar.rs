//! Batch Quantile Autoregression: pinball-loss minimization over lagged
//! linear predictors and one-step-ahead VaR forecasting.

mod solver;

use serde::{Deserialize, Serialize};

use crate::core::{embed, QuantileLevel, Series, Signal};
use crate::error::{Error, Result};

pub use solver::{solve_quantile_lp, Design};

/// A fitted quantile autoregression of order `lag` at level `alpha`.
/// `theta[0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QarModel {
    pub alpha: QuantileLevel,
    pub lag: usize,
    pub theta: Vec<f64>,
    pub train_loss: f64,
}

/// Fits a QAR(p) by minimizing the summed pinball loss over all indices
/// with a full lag window.
pub fn fit(series: &Series, p: usize, alpha: QuantileLevel) -> Result<QarModel> {
    fit_window(series, p, alpha, p)
}

/// Fits a QAR(p) scoring only outcomes at indices `t_start..len`. Used by
/// lag selection so every candidate order scores the same outcome window.
pub fn fit_window(
    series: &Series,
    p: usize,
    alpha: QuantileLevel,
    t_start: usize,
) -> Result<QarModel> {
    if p == 0 {
        return Err(Error::InvalidParameter("lag order must be positive".into()));
    }
    if t_start < p {
        return Err(Error::InvalidParameter(format!(
            "window start {t_start} precedes lag order {p}"
        )));
    }
    let n_total = series.len();
    let k = p + 1;
    if n_total < t_start + k + 1 {
        return Err(Error::TooShort {
            need: t_start + k + 1,
            got: n_total,
        });
    }

    let n = n_total - t_start;
    let mut rows = Vec::with_capacity(n * k);
    let mut y = Vec::with_capacity(n);
    for t in t_start..n_total {
        let x = embed(series, p, t)?;
        rows.extend_from_slice(x.components());
        y.push(series.values()[t]);
    }
    let design = Design { rows, n, k };
    let (theta, train_loss) = solve_quantile_lp(&design, &y, alpha.value())?;
    Ok(QarModel {
        alpha,
        lag: p,
        theta,
        train_loss,
    })
}

/// Inner product of the model coefficients with a signal.
pub fn predict(model: &QarModel, x: &Signal) -> Result<f64> {
    x.dot(&model.theta)
}

/// One-step-ahead rolling forecasts over `t_start..t_end`, always using the
/// realized history (forecasts are never fed back).
pub fn forecast_path(
    model: &QarModel,
    series: &Series,
    t_start: usize,
    t_end: usize,
) -> Result<Vec<f64>> {
    if t_start < model.lag {
        return Err(Error::IndexOutOfRange {
            t: t_start,
            lag: model.lag,
            len: series.len(),
        });
    }
    if t_end > series.len() || t_start > t_end {
        return Err(Error::IndexOutOfRange {
            t: t_end,
            lag: model.lag,
            len: series.len(),
        });
    }
    let mut out = Vec::with_capacity(t_end - t_start);
    for t in t_start..t_end {
        let x = embed(series, model.lag, t)?;
        out.push(predict(model, &x)?);
    }
    Ok(out)
}

/// Counts strictly negative and strictly positive in-sample residuals,
/// treating residuals within a small relative band of zero as interpolated.
/// At a pinball-loss optimum `below <= alpha * n` and `above <= (1-alpha) * n`.
pub fn residual_sign_counts(
    model: &QarModel,
    series: &Series,
    t_start: usize,
) -> Result<(usize, usize, usize)> {
    let preds = forecast_path(model, series, t_start, series.len())?;
    let outcomes = &series.values()[t_start..];
    let scale = outcomes
        .iter()
        .chain(preds.iter())
        .map(|v| v.abs())
        .fold(1.0_f64, f64::max);
    let tol = 1e-8 * scale;
    let mut below = 0;
    let mut above = 0;
    for (&y, &g) in outcomes.iter().zip(&preds) {
        let r = y - g;
        if r < -tol {
            below += 1;
        } else if r > tol {
            above += 1;
        }
    }
    Ok((below, above, outcomes.len()))
}
