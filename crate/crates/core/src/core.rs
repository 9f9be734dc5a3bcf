//! Foundational types shared by the batch and online estimators: series,
//! lag signals, quantile levels, the pinball loss and cumulative-loss
//! accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered univariate series of finite real observations, optionally
/// carrying monotone timestamps (days since epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: Vec<f64>,
    timestamps: Option<Vec<f64>>,
}

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("series values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series values"));
        }
        Ok(Series {
            values,
            timestamps: None,
        })
    }

    pub fn with_timestamps(values: Vec<f64>, timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: timestamps.len(),
            });
        }
        if timestamps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("timestamps"));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(
                "timestamps must be non-decreasing".into(),
            ));
        }
        let mut s = Series::new(values)?;
        s.timestamps = Some(timestamps);
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Lagged regression signal `(1, y_{t-1}, ..., y_{t-p})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    components: Vec<f64>,
}

impl Signal {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components[0] != 1.0 {
            return Err(Error::InvalidParameter(
                "signal must start with an intercept component equal to 1".into(),
            ));
        }
        if components.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal components"));
        }
        Ok(Signal { components })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Inner product with a coefficient vector of the same length.
    pub fn dot(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.components.len() {
            return Err(Error::LengthMismatch {
                left: self.components.len(),
                right: theta.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .zip(theta)
            .map(|(x, t)| x * t)
            .sum())
    }
}

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidQuantile(alpha));
        }
        Ok(QuantileLevel(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-step losses plus their running total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLedger {
    per_step: Vec<f64>,
    cumulative: f64,
}

impl Default for LossLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl LossLedger {
    pub fn new() -> Self {
        LossLedger {
            per_step: Vec::new(),
            cumulative: 0.0,
        }
    }

    pub fn push(&mut self, loss: f64) {
        self.per_step.push(loss);
        self.cumulative += loss;
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }
}

/// Pinball (check) loss: `alpha*(y-gamma)` when `y >= gamma`, else
/// `(1-alpha)*(gamma-y)`. Non-negative, zero exactly at `y == gamma`.
pub fn pinball_loss(y: f64, gamma: f64, alpha: QuantileLevel) -> f64 {
    let a = alpha.value();
    if y >= gamma {
        a * (y - gamma)
    } else {
        (1.0 - a) * (gamma - y)
    }
}

/// Builds the signal `(1, y_{t-1}, ..., y_{t-p})` for 0-based index `t`.
pub fn embed(series: &Series, p: usize, t: usize) -> Result<Signal> {
    if p == 0 {
        return Err(Error::InvalidParameter("lag order must be positive".into()));
    }
    let len = series.len();
    if t < p || t >= len {
        return Err(Error::IndexOutOfRange { t, lag: p, len });
    }
    let mut components = Vec::with_capacity(p + 1);
    components.push(1.0);
    for j in 1..=p {
        components.push(series.values()[t - j]);
    }
    Signal::new(components)
}

/// Left-continuous inverse of the empirical CDF: the smallest sample value
/// `z` with `count(samples <= z) / n >= alpha`.
pub fn empirical_quantile(samples: &[f64], alpha: QuantileLevel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("quantile samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    // smallest k with k/n >= alpha, i.e. k = ceil(alpha * n), at least 1
    let k = (alpha.value() * n as f64).ceil().max(1.0) as usize;
    Ok(sorted[k.min(n) - 1])
}

/// Pointwise pinball losses of `predictions` against `outcomes` plus their sum.
pub fn cumulative_loss(
    outcomes: &[f64],
    predictions: &[f64],
    alpha: QuantileLevel,
) -> Result<LossLedger> {
    if outcomes.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: predictions.len(),
        });
    }
    let mut ledger = LossLedger::new();
    for (&y, &g) in outcomes.iter().zip(predictions) {
        ledger.push(pinball_loss(y, g, alpha));
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(alpha: f64) -> QuantileLevel {
        QuantileLevel::new(alpha).unwrap()
    }

    #[test]
    fn pinball_direct_cases() {
        assert_eq!(pinball_loss(1.0, 0.0, q(0.9)), 0.9);
        assert_eq!(pinball_loss(3.7, 3.7, q(0.42)), 0.0);
        assert_eq!(pinball_loss(0.0, 2.0, q(0.25)), 1.5);
    }

    #[test]
    fn embed_unrolls_definition() {
        let s = Series::new(vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let x = embed(&s, 2, 2).unwrap();
        assert_eq!(x.components(), &[1.0, 20.0, 10.0]);
    }

    #[test]
    fn embed_rejects_missing_history() {
        let s = Series::new(vec![5.0]).unwrap();
        assert!(embed(&s, 1, 0).is_err());
        let s = Series::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(embed(&s, 3, 2).is_err());
        assert!(embed(&s, 1, 3).is_err());
    }

    #[test]
    fn empirical_quantile_left_continuous() {
        assert_eq!(
            empirical_quantile(&[1.0, 2.0, 3.0, 4.0], q(0.5)).unwrap(),
            2.0
        );
        assert_eq!(empirical_quantile(&[7.0], q(0.31)).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], q(0.9)).unwrap(), 3.0);
    }

    #[test]
    fn cumulative_loss_sums_pointwise() {
        let l = cumulative_loss(&[1.0, 0.0], &[0.0, 1.0], q(0.9)).unwrap();
        assert!((l.cumulative() - 1.0).abs() < 1e-12);
        assert!((l.per_step()[0] - 0.9).abs() < 1e-12);
        assert!((l.per_step()[1] - 0.1).abs() < 1e-12);

        let same = cumulative_loss(&[2.0, 3.0], &[2.0, 3.0], q(0.7)).unwrap();
        assert_eq!(same.cumulative(), 0.0);

        assert!(cumulative_loss(&[1.0], &[1.0, 2.0], q(0.5)).is_err());
    }

    #[test]
    fn series_rejects_bad_input() {
        assert!(Series::new(vec![]).is_err());
        assert!(Series::new(vec![1.0, f64::NAN]).is_err());
        assert!(Series::with_timestamps(vec![1.0, 2.0], vec![2.0, 1.0]).is_err());
        assert!(Series::with_timestamps(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.5).is_ok());
    }
}
