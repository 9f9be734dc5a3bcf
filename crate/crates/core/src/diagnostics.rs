//! Correlograms and BIC-based lag-order selection.

use serde::{Deserialize, Serialize};

use crate::core::{QuantileLevel, Series};
use crate::error::{Error, Result};
use crate::qar;

/// ACF or PACF values with the +-1.96/sqrt(N) significance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramResult {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub confidence_band: f64,
}

/// BIC per candidate lag and the winning order (smallest BIC, smallest lag
/// on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSelection {
    pub candidate_lags: Vec<usize>,
    pub bic_values: Vec<f64>,
    pub chosen_lag: usize,
}

fn autocovariances(series: &Series, max_lag: usize) -> Result<Vec<f64>> {
    let values = series.values();
    let n = values.len();
    if n <= max_lag + 1 {
        return Err(Error::TooShort {
            need: max_lag + 2,
            got: n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut cov = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        // biased 1/N estimator
        let mut acc = 0.0;
        for t in k..n {
            acc += (values[t] - mean) * (values[t - k] - mean);
        }
        cov.push(acc / n as f64);
    }
    // tolerance so that rounding on an exactly constant series still fires
    if cov[0] <= 1e-24 * (1.0 + mean * mean) {
        return Err(Error::ZeroVariance);
    }
    Ok(cov)
}

/// Sample autocorrelation at lags `1..=max_lag` (lag 0 is identically 1 and
/// omitted from the result).
pub fn acf(series: &Series, max_lag: usize) -> Result<CorrelogramResult> {
    let cov = autocovariances(series, max_lag)?;
    let c0 = cov[0];
    let values: Vec<f64> = cov[1..].iter().map(|c| c / c0).collect();
    Ok(CorrelogramResult {
        lags: (1..=max_lag).collect(),
        values,
        confidence_band: 1.96 / (series.len() as f64).sqrt(),
    })
}

/// Partial autocorrelations via the Durbin-Levinson recursion on the sample
/// autocorrelations.
pub fn pacf(series: &Series, max_lag: usize) -> Result<CorrelogramResult> {
    let cov = autocovariances(series, max_lag)?;
    let c0 = cov[0];
    let rho: Vec<f64> = cov.iter().map(|c| c / c0).collect();

    let mut pacf_values = Vec::with_capacity(max_lag);
    let mut phi_prev: Vec<f64> = Vec::new(); // phi_{k-1, j}, j = 1..k-1
    for k in 1..=max_lag {
        let mut num = rho[k];
        let mut den = 1.0;
        for (j, &p) in phi_prev.iter().enumerate() {
            num -= p * rho[k - 1 - j];
            den -= p * rho[j + 1];
        }
        if den.abs() < 1e-14 {
            return Err(Error::ZeroVariance);
        }
        let phi_kk = num / den;
        let mut phi_next = Vec::with_capacity(k);
        for (j, &p) in phi_prev.iter().enumerate() {
            phi_next.push(p - phi_kk * phi_prev[k - 2 - j]);
        }
        phi_next.push(phi_kk);
        phi_prev = phi_next;
        pacf_values.push(phi_kk);
    }
    Ok(CorrelogramResult {
        lags: (1..=max_lag).collect(),
        values: pacf_values,
        confidence_band: 1.96 / (series.len() as f64).sqrt(),
    })
}

/// BIC of a quantile model from its minimized total pinball loss, using the
/// asymmetric-Laplace working likelihood with scale set to the mean loss:
/// `lnL = n (ln a + ln(1-a) - 1 - ln(loss/n))`.
pub fn bic(
    total_pinball_loss: f64,
    n_params: usize,
    n_obs: usize,
    alpha: QuantileLevel,
) -> Result<f64> {
    if n_params == 0 {
        return Err(Error::InvalidParameter("n_params must be positive".into()));
    }
    if n_obs <= n_params {
        return Err(Error::InvalidParameter(format!(
            "n_obs {n_obs} must exceed n_params {n_params}"
        )));
    }
    if !(total_pinball_loss.is_finite() && total_pinball_loss > 0.0) {
        return Err(Error::DegenerateFit(
            "zero or non-finite pinball loss: likelihood degenerates".into(),
        ));
    }
    let a = alpha.value();
    let n = n_obs as f64;
    let lnl = n * (a.ln() + (1.0 - a).ln() - 1.0 - (total_pinball_loss / n).ln());
    Ok(-2.0 * lnl + n_params as f64 * n.ln())
}

/// Fits QAR(p) for `p = 1..=max_p` on a shared trailing outcome window and
/// returns the BIC-minimizing order. Every candidate scores exactly
/// `len - max_p` outcomes.
pub fn select_lag(
    series: &Series,
    alpha: QuantileLevel,
    max_p: usize,
) -> Result<LagSelection> {
    if max_p == 0 {
        return Err(Error::InvalidParameter("max_p must be positive".into()));
    }
    let n = series.len();
    if n <= max_p + 1 {
        return Err(Error::TooShort {
            need: max_p + 2,
            got: n,
        });
    }
    let n_scored = n - max_p;
    let mut candidate_lags = Vec::with_capacity(max_p);
    let mut bic_values = Vec::with_capacity(max_p);
    for p in 1..=max_p {
        let model = qar::fit_window(series, p, alpha, max_p)?;
        let value = bic(model.train_loss, p + 1, n_scored, alpha)?;
        candidate_lags.push(p);
        bic_values.push(value);
    }
    let chosen_idx = bic_values
        .iter()
        .enumerate()
        .fold(0usize, |best, (i, &v)| {
            if v < bic_values[best] {
                i
            } else {
                best
            }
        });
    Ok(LagSelection {
        chosen_lag: candidate_lags[chosen_idx],
        candidate_lags,
        bic_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn q(alpha: f64) -> QuantileLevel {
        QuantileLevel::new(alpha).unwrap()
    }

    fn ar_series(coeffs: &[f64], n: usize, seed: u64) -> Series {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let p = coeffs.len();
        let mut values = vec![0.0; p];
        for _ in 0..(n + 200) {
            let z: f64 = StandardNormal.sample(&mut rng);
            let len = values.len();
            let mut y = z;
            for (j, &c) in coeffs.iter().enumerate() {
                y += c * values[len - 1 - j];
            }
            values.push(y);
        }
        Series::new(values.split_off(p + 200)).unwrap()
    }

    fn white_noise(n: usize, seed: u64) -> Series {
        ar_series(&[0.0], n, seed)
    }

    #[test]
    fn constant_series_hits_zero_variance_guard() {
        let s = Series::new(vec![4.2; 50]).unwrap();
        assert!(matches!(acf(&s, 3), Err(Error::ZeroVariance)));
        assert!(matches!(pacf(&s, 3), Err(Error::ZeroVariance)));
    }

    #[test]
    fn too_short_series_rejected() {
        let s = Series::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(acf(&s, 3).is_err());
    }

    #[test]
    fn ar1_acf_decays_geometrically() {
        let s = ar_series(&[0.5], 100_000, 1);
        let r = acf(&s, 5).unwrap();
        for (k, &v) in r.lags.iter().zip(&r.values) {
            assert!(
                (v - 0.5_f64.powi(*k as i32)).abs() < 0.02,
                "lag {k}: {v}"
            );
        }
    }

    #[test]
    fn ar1_pacf_cuts_off_after_lag_one() {
        let s = ar_series(&[0.5], 100_000, 2);
        let r = pacf(&s, 5).unwrap();
        assert!((r.values[0] - 0.5).abs() < 0.02);
        for &v in &r.values[1..] {
            assert!(v.abs() < 0.02, "pacf tail {v}");
        }
    }

    #[test]
    fn white_noise_pacf_is_null() {
        let n = 100_000;
        let s = white_noise(n, 3);
        let r = pacf(&s, 8).unwrap();
        let band = 3.0 / (n as f64).sqrt();
        for &v in &r.values {
            assert!(v.abs() < band, "{v} vs {band}");
        }
    }

    #[test]
    fn pacf_lag_one_equals_acf_lag_one() {
        let s = ar_series(&[0.4, 0.2], 5000, 4);
        let a = acf(&s, 4).unwrap();
        let p = pacf(&s, 4).unwrap();
        assert!((a.values[0] - p.values[0]).abs() < 1e-12);
    }

    #[test]
    fn correlograms_are_affine_invariant() {
        let s = ar_series(&[0.5], 3000, 5);
        let scaled =
            Series::new(s.values().iter().map(|v| 3.5 * v - 7.0).collect()).unwrap();
        let a1 = acf(&s, 6).unwrap();
        let a2 = acf(&scaled, 6).unwrap();
        for (x, y) in a1.values.iter().zip(&a2.values) {
            assert!((x - y).abs() < 1e-9);
        }
        let p1 = pacf(&s, 6).unwrap();
        let p2 = pacf(&scaled, 6).unwrap();
        for (x, y) in p1.values.iter().zip(&p2.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn bic_algebra() {
        let alpha = q(0.5);
        let b1 = bic(10.0, 3, 100, alpha).unwrap();
        let b2 = bic(20.0, 3, 100, alpha).unwrap();
        assert!((b2 - b1 - 2.0 * 100.0 * 2.0_f64.ln()).abs() < 1e-9);

        let b3 = bic(10.0, 4, 100, alpha).unwrap();
        assert!((b3 - b1 - 100.0_f64.ln()).abs() < 1e-9);

        assert!(bic(0.0, 3, 100, alpha).is_err());
        assert!(bic(10.0, 100, 100, alpha).is_err());
    }

    #[test]
    fn select_lag_with_max_p_one_returns_one() {
        let s = white_noise(200, 6);
        let sel = select_lag(&s, q(0.5), 1).unwrap();
        assert_eq!(sel.chosen_lag, 1);
        assert_eq!(sel.candidate_lags, vec![1]);
    }

    #[test]
    fn select_lag_recovers_ar3_order() {
        let mut hits = 0;
        let reps = 100;
        for seed in 0..reps {
            let s = ar_series(&[0.4, -0.3, 0.35], 2000, 100 + seed);
            let sel = select_lag(&s, q(0.5), 10).unwrap();
            if sel.chosen_lag == 3 {
                hits += 1;
            }
        }
        assert!(hits >= 90, "AR(3) recovered in {hits}/{reps} runs");
    }

    #[test]
    fn white_noise_prefers_smallest_lag() {
        let mut hits = 0;
        let runs = 11;
        for seed in 0..runs {
            let s = white_noise(1000, 500 + seed);
            let sel = select_lag(&s, q(0.5), 6).unwrap();
            if sel.chosen_lag == 1 {
                hits += 1;
            }
        }
        assert!(hits * 2 > runs, "lag 1 chosen in {hits}/{runs} runs");
    }
}
