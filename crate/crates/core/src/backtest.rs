//! Coverage backtesting of VaR forecast paths: violation extraction, the
//! Kupiec unconditional and Christoffersen conditional coverage
//! likelihood-ratio tests, and the chi-square p-value machinery.

use serde::{Deserialize, Serialize};

use crate::core::QuantileLevel;
use crate::error::{Error, Result};

/// One forecast/outcome pair; `violated` iff the outcome strictly exceeds
/// the forecast (ties count as covered).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub t: usize,
    pub outcome: f64,
    pub var_forecast: f64,
    pub violated: bool,
}

/// Fail to reject / reject the coverage null at the chosen significance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "FR")]
    FailToReject,
    #[serde(rename = "R")]
    Reject,
}

impl Decision {
    fn from_pvalue(p: f64, significance: f64) -> Decision {
        if p < significance {
            Decision::Reject
        } else {
            Decision::FailToReject
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::FailToReject => "FR",
            Decision::Reject => "R",
        }
    }
}

/// Full coverage report for one quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub alpha: QuantileLevel,
    pub n_obs: usize,
    pub expected_violations: usize,
    pub actual_violations: usize,
    pub uc_stat: f64,
    pub uc_pvalue: f64,
    pub cc_stat: f64,
    pub cc_pvalue: f64,
    pub uc_decision: Decision,
    pub cc_decision: Decision,
    pub significance: f64,
}

/// Flags every outcome strictly above its forecast.
pub fn extract_violations(outcomes: &[f64], forecasts: &[f64]) -> Result<Vec<ViolationRecord>> {
    if outcomes.len() != forecasts.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: forecasts.len(),
        });
    }
    if outcomes.iter().chain(forecasts).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("backtest outcomes or forecasts"));
    }
    Ok(outcomes
        .iter()
        .zip(forecasts)
        .enumerate()
        .map(|(t, (&outcome, &var_forecast))| ViolationRecord {
            t,
            outcome,
            var_forecast,
            violated: outcome > var_forecast,
        })
        .collect())
}

/// `floor((1 - alpha) * T)` violations expected under exact coverage.
pub fn expected_violations(t_obs: usize, alpha: QuantileLevel) -> usize {
    ((1.0 - alpha.value()) * t_obs as f64).floor() as usize
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Kupiec unconditional coverage LR test of `n_violations` in `t_obs` steps
/// against the nominal rate `1 - alpha`.
pub fn kupiec(
    n_violations: usize,
    t_obs: usize,
    alpha: QuantileLevel,
    significance: f64,
) -> Result<(f64, f64, Decision)> {
    if t_obs == 0 || n_violations > t_obs {
        return Err(Error::InvalidParameter(format!(
            "invalid violation count {n_violations} for {t_obs} observations"
        )));
    }
    let p0 = 1.0 - alpha.value();
    let n = n_violations as f64;
    let t = t_obs as f64;
    let pi_hat = n / t;
    // -2 [ n ln(p0/pi) + (T-n) ln((1-p0)/(1-pi)) ], 0*ln0 = 0
    let log_null = xlogy(n, p0) + xlogy(t - n, 1.0 - p0);
    let log_alt = xlogy(n, pi_hat) + xlogy(t - n, 1.0 - pi_hat);
    let mut stat = (-2.0 * (log_null - log_alt)).max(0.0);
    if stat < 1e-12 {
        // rounding noise when the empirical rate attains the null
        stat = 0.0;
    }
    let pvalue = chi2_sf(stat, 1)?;
    Ok((stat, pvalue, Decision::from_pvalue(pvalue, significance)))
}

/// Christoffersen conditional coverage test: Kupiec plus a first-order
/// Markov independence LR on the violation indicator sequence.
/// Returns `(cc_stat, cc_pvalue, decision)`.
pub fn christoffersen(
    indicators: &[bool],
    alpha: QuantileLevel,
    significance: f64,
) -> Result<(f64, f64, Decision)> {
    if indicators.len() < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: indicators.len(),
        });
    }
    let n_violations = indicators.iter().filter(|&&v| v).count();
    let (uc_stat, _, _) = kupiec(n_violations, indicators.len(), alpha, significance)?;

    let (mut n00, mut n01, mut n10, mut n11) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for w in indicators.windows(2) {
        match (w[0], w[1]) {
            (false, false) => n00 += 1.0,
            (false, true) => n01 += 1.0,
            (true, false) => n10 += 1.0,
            (true, true) => n11 += 1.0,
        }
    }
    let total = n00 + n01 + n10 + n11;
    let pi = (n01 + n11) / total;
    let log_null = xlogy(n01 + n11, pi) + xlogy(n00 + n10, 1.0 - pi);
    let mut log_alt = 0.0;
    if n00 + n01 > 0.0 {
        let pi01 = n01 / (n00 + n01);
        log_alt += xlogy(n01, pi01) + xlogy(n00, 1.0 - pi01);
    }
    if n10 + n11 > 0.0 {
        let pi11 = n11 / (n10 + n11);
        log_alt += xlogy(n11, pi11) + xlogy(n10, 1.0 - pi11);
    }
    let lr_ind = (-2.0 * (log_null - log_alt)).max(0.0);

    let cc_stat = uc_stat + lr_ind;
    let cc_pvalue = chi2_sf(cc_stat, 2)?;
    Ok((
        cc_stat,
        cc_pvalue,
        Decision::from_pvalue(cc_pvalue, significance),
    ))
}

/// Survival function of the chi-square distribution with `k` degrees of
/// freedom, via the regularized upper incomplete gamma function.
pub fn chi2_sf(x: f64, k: usize) -> Result<f64> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "chi-square statistic must be non-negative, got {x}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter(
            "degrees of freedom must be positive".into(),
        ));
    }
    Ok(gamma_q(k as f64 / 2.0, x / 2.0))
}

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 5, n = 6
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for (j, &c) in COEFFS.iter().enumerate() {
        ser += c / (x + 1.0 + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Assembles the full per-quantile coverage report.
pub fn run_backtest(
    records: &[ViolationRecord],
    alpha: QuantileLevel,
    significance: f64,
) -> Result<BacktestReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("violation records"));
    }
    let indicators: Vec<bool> = records.iter().map(|r| r.violated).collect();
    let actual = indicators.iter().filter(|&&v| v).count();
    let t_obs = records.len();
    let (uc_stat, uc_pvalue, uc_decision) = kupiec(actual, t_obs, alpha, significance)?;
    let (cc_stat, cc_pvalue, cc_decision) = christoffersen(&indicators, alpha, significance)?;
    Ok(BacktestReport {
        alpha,
        n_obs: t_obs,
        expected_violations: expected_violations(t_obs, alpha),
        actual_violations: actual,
        uc_stat,
        uc_pvalue,
        cc_stat,
        cc_pvalue,
        uc_decision,
        cc_decision,
        significance,
    })
}
