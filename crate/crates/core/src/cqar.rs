//! Online competitive quantile autoregression. On every step the learner
//! samples a quasi-posterior over QAR coefficients by random-walk
//! Metropolis-Hastings and predicts with the burn-in-discarded chain
//! average; its average regret against any fixed QAR decays like
//! 1/sqrt(T).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core::{embed, pinball_loss, LossLedger, QuantileLevel, Series};
use crate::error::{Error, Result};

/// Hyperparameters of the online learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqarConfig {
    pub alpha: QuantileLevel,
    pub lag: usize,
    /// MCMC iterations per step (M).
    pub mcmc_iters: usize,
    /// Samples discarded from the front of each sweep (M0).
    pub burn_in: usize,
    /// Standard deviation of the isotropic Gaussian proposal.
    pub proposal_sd: f64,
    /// L1 regularization weight in the quasi-posterior exponent.
    pub regularizer: f64,
    pub seed: u64,
    /// Clamp predictions to the running outcome range (off by default;
    /// used only for bound-conformance experiments).
    #[serde(default)]
    pub clamp_to_range: bool,
}

impl CqarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::InvalidParameter("lag must be positive".into()));
        }
        if self.mcmc_iters == 0 {
            return Err(Error::InvalidParameter("mcmc_iters must be positive".into()));
        }
        if self.burn_in >= self.mcmc_iters {
            return Err(Error::InvalidParameter(format!(
                "burn_in {} must be smaller than mcmc_iters {}",
                self.burn_in, self.mcmc_iters
            )));
        }
        if !(self.proposal_sd.is_finite() && self.proposal_sd > 0.0) {
            return Err(Error::InvalidParameter("proposal_sd must be positive".into()));
        }
        if !(self.regularizer.is_finite() && self.regularizer > 0.0) {
            return Err(Error::InvalidParameter("regularizer must be positive".into()));
        }
        Ok(())
    }
}

/// Unnormalized log quasi-posterior over coefficients after `t` scored
/// outcomes: `-(1/sqrt(t)) * sum of pinball losses - a * ||theta||_1`.
/// With `t == 0` only the L1 prior remains.
pub fn log_quasi_posterior(
    theta: &[f64],
    history: &Series,
    t: usize,
    config: &CqarConfig,
) -> Result<f64> {
    config.validate()?;
    let p = config.lag;
    if theta.len() != p + 1 {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: p + 1,
        });
    }
    if history.len() < p + t {
        return Err(Error::TooShort {
            need: p + t,
            got: history.len(),
        });
    }
    let l1: f64 = theta.iter().map(|v| v.abs()).sum();
    if t == 0 {
        return Ok(-config.regularizer * l1);
    }
    let mut loss = 0.0;
    for s in 0..t {
        let x = embed(history, p, p + s)?;
        loss += pinball_loss(history.values()[p + s], x.dot(theta)?, config.alpha);
    }
    Ok(-loss / (t as f64).sqrt() - config.regularizer * l1)
}

/// The learner's mutable state: observed history, current chain position,
/// loss ledger and sampler health counters.
#[derive(Debug, Clone)]
pub struct CqarState {
    config: CqarConfig,
    history: Vec<f64>,
    /// cached (signal, outcome) pairs for every scored step
    scored: Vec<(Vec<f64>, f64)>,
    theta: Vec<f64>,
    accepted: u64,
    proposed: u64,
    ledger: LossLedger,
    predictions: Vec<f64>,
    pending: Option<f64>,
    running_min: f64,
    running_max: f64,
    rng: ChaCha12Rng,
}

impl CqarState {
    /// Starts the protocol with at least `lag` context observations; the
    /// chain position is the zero vector.
    pub fn new(config: CqarConfig, context: &[f64]) -> Result<Self> {
        config.validate()?;
        if context.len() < config.lag {
            return Err(Error::TooShort {
                need: config.lag,
                got: context.len(),
            });
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cqar context"));
        }
        let theta = vec![0.0; config.lag + 1];
        let rng = ChaCha12Rng::seed_from_u64(config.seed);
        let running_min = context.iter().cloned().fold(f64::INFINITY, f64::min);
        let running_max = context.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(CqarState {
            config,
            history: context.to_vec(),
            scored: Vec::new(),
            theta,
            accepted: 0,
            proposed: 0,
            ledger: LossLedger::new(),
            predictions: Vec::new(),
            pending: None,
            running_min,
            running_max,
            rng,
        })
    }

    pub fn config(&self) -> &CqarConfig {
        &self.config
    }

    /// Number of scored steps completed.
    pub fn step(&self) -> usize {
        self.ledger.len()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn chain_position(&self) -> &[f64] {
        &self.theta
    }

    pub fn ledger(&self) -> &LossLedger {
        &self.ledger
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    fn log_q(&self, theta: &[f64]) -> f64 {
        let a = self.config.regularizer;
        let l1: f64 = theta.iter().map(|v| v.abs()).sum();
        let t = self.scored.len();
        if t == 0 {
            return -a * l1;
        }
        let alpha = self.config.alpha;
        let mut loss = 0.0;
        for (x, y) in &self.scored {
            let xi: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
            loss += pinball_loss(*y, xi, alpha);
        }
        -loss / (t as f64).sqrt() - a * l1
    }

    fn current_signal(&self) -> Vec<f64> {
        let p = self.config.lag;
        let n = self.history.len();
        let mut x = Vec::with_capacity(p + 1);
        x.push(1.0);
        for j in 1..=p {
            x.push(self.history[n - j]);
        }
        x
    }

    /// Runs one M-iteration Metropolis-Hastings sweep against the
    /// quasi-posterior of the losses seen so far and returns the prediction
    /// for the upcoming outcome (the chain average past burn-in).
    pub fn mh_sweep(&mut self) -> Result<f64> {
        if self.pending.is_some() {
            return Err(Error::ProtocolOrder(
                "prediction already pending; call observe first",
            ));
        }
        let x = self.current_signal();
        let k = self.theta.len();
        let m_total = self.config.mcmc_iters;
        let m0 = self.config.burn_in;
        let sd = self.config.proposal_sd;

        let mut theta = self.theta.clone();
        let mut log_q_cur = self.log_q(&theta);
        let mut proposal = vec![0.0; k];
        let mut acc = 0.0;
        for m in 1..=m_total {
            for (pj, tj) in proposal.iter_mut().zip(&theta) {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *pj = tj + sd * z;
            }
            let log_q_prop = self.log_q(&proposal);
            let delta = log_q_prop - log_q_cur;
            self.proposed += 1;
            // log-space acceptance: never exponentiate large magnitudes
            let accept = delta >= 0.0 || self.rng.random::<f64>().ln() < delta;
            if accept {
                std::mem::swap(&mut theta, &mut proposal);
                log_q_cur = log_q_prop;
                self.accepted += 1;
            }
            if m > m0 {
                let xi: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
                acc += xi;
            }
        }
        self.theta = theta;
        let mut gamma = acc / (m_total - m0) as f64;
        if self.config.clamp_to_range {
            gamma = gamma.clamp(self.running_min, self.running_max);
        }
        self.pending = Some(gamma);
        Ok(gamma)
    }

    /// Records the outcome for the pending prediction, suffering its
    /// pinball loss.
    pub fn observe(&mut self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("cqar outcome"));
        }
        let Some(gamma) = self.pending.take() else {
            return Err(Error::ProtocolOrder(
                "observe called without a pending prediction",
            ));
        };
        let x = self.current_signal();
        self.ledger
            .push(pinball_loss(y, gamma, self.config.alpha));
        self.predictions.push(gamma);
        self.scored.push((x, y));
        self.history.push(y);
        self.running_min = self.running_min.min(y);
        self.running_max = self.running_max.max(y);
        Ok(())
    }

    /// Fraction of MH proposals accepted so far.
    pub fn acceptance_ratio(&self) -> Result<f64> {
        if self.proposed == 0 {
            return Err(Error::NoProposals);
        }
        Ok(self.accepted as f64 / self.proposed as f64)
    }
}

/// Outcome of driving a [`CqarState`] over a whole series.
#[derive(Debug, Clone)]
pub struct CqarRun {
    pub predictions: Vec<f64>,
    pub outcomes: Vec<f64>,
    pub ledger: LossLedger,
    pub acceptance_ratio: f64,
    /// Leading observations consumed as lag context only.
    pub skipped: usize,
}

/// Plays the full predict/observe protocol over `series`; the first `lag`
/// observations serve as context and are never scored.
pub fn run_series(config: &CqarConfig, series: &Series) -> Result<CqarRun> {
    let p = config.lag;
    if series.len() < p + 1 {
        return Err(Error::TooShort {
            need: p + 1,
            got: series.len(),
        });
    }
    let mut state = CqarState::new(config.clone(), &series.values()[..p])?;
    let mut outcomes = Vec::with_capacity(series.len() - p);
    for &y in &series.values()[p..] {
        state.mh_sweep()?;
        state.observe(y)?;
        outcomes.push(y);
    }
    let acceptance_ratio = state.acceptance_ratio()?;
    Ok(CqarRun {
        predictions: state.predictions.clone(),
        outcomes,
        ledger: state.ledger.clone(),
        acceptance_ratio,
        skipped: p,
    })
}

/// Cumulative and per-prefix average regret of a learner ledger against a
/// comparator ledger, with an optional per-prefix bound attached later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub learner_losses: Vec<f64>,
    pub comparator_losses: Vec<f64>,
    pub cumulative_regret: f64,
    pub avg_regret: Vec<f64>,
    pub bound: Option<Vec<f64>>,
}

/// Per-prefix average regret between two loss ledgers of equal length.
pub fn regret_curve(learner: &LossLedger, comparator: &LossLedger) -> Result<RegretReport> {
    if learner.len() != comparator.len() {
        return Err(Error::LengthMismatch {
            left: learner.len(),
            right: comparator.len(),
        });
    }
    let mut avg = Vec::with_capacity(learner.len());
    let mut cum = 0.0;
    for (t, (l, c)) in learner
        .per_step()
        .iter()
        .zip(comparator.per_step())
        .enumerate()
    {
        cum += l - c;
        avg.push(cum / (t + 1) as f64);
    }
    Ok(RegretReport {
        learner_losses: learner.per_step().to_vec(),
        comparator_losses: comparator.per_step().to_vec(),
        cumulative_regret: cum,
        avg_regret: avg,
        bound: None,
    })
}

/// Constants entering the theoretical average-regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Lower outcome bound A.
    pub lower: f64,
    /// Upper outcome bound B.
    pub upper: f64,
    /// L1 regularization weight a.
    pub regularizer: f64,
    /// Lag order p.
    pub lag: usize,
    /// L1 norm of the comparator coefficients.
    pub theta_l1: f64,
}

/// Evaluates the theoretical average-regret bound
/// `a||theta||_1 / sqrt(T) + ((p+1) ln(1 + sqrt(T) max(1,B) / a) + (B-A)^2) / sqrt(T)`.
pub fn regret_bound(params: &BoundParams, t_steps: usize) -> Result<f64> {
    if params.lower > params.upper {
        return Err(Error::InvalidParameter(
            "bound requires A <= B".into(),
        ));
    }
    if !(params.regularizer.is_finite() && params.regularizer > 0.0) {
        return Err(Error::InvalidParameter("regularizer must be positive".into()));
    }
    if params.theta_l1 < 0.0 || t_steps == 0 || params.lag == 0 {
        return Err(Error::InvalidParameter("invalid bound parameters".into()));
    }
    let sqrt_t = (t_steps as f64).sqrt();
    let a = params.regularizer;
    let range = params.upper - params.lower;
    let log_term =
        (params.lag + 1) as f64 * (1.0 + sqrt_t / a * params.upper.max(1.0)).ln();
    Ok(a * params.theta_l1 / sqrt_t + (log_term + range * range) / sqrt_t)
}

/// Bound evaluated at every prefix, with A and B taken as the running
/// min/max of the outcomes observed up to the previous step.
pub fn bound_series(
    regularizer: f64,
    lag: usize,
    theta_l1: f64,
    outcomes: &[f64],
) -> Result<Vec<f64>> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("bound outcomes"));
    }
    let mut out = Vec::with_capacity(outcomes.len());
    let mut lo = outcomes[0];
    let mut hi = outcomes[0];
    for t in 1..=outcomes.len() {
        // outcomes up to index t-2 inclusive (steps 1..T-1); the first
        // prefix falls back to the first outcome
        if t >= 2 {
            lo = lo.min(outcomes[t - 2]);
            hi = hi.max(outcomes[t - 2]);
        }
        out.push(regret_bound(
            &BoundParams {
                lower: lo,
                upper: hi,
                regularizer,
                lag,
                theta_l1,
            },
            t,
        )?);
    }
    Ok(out)
}

/// One cell of the hyperparameter tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneCell {
    pub regularizer: f64,
    pub proposal_sd: f64,
    pub acceptance_ratio: f64,
    pub pinball_loss: f64,
}

/// Runs the learner once per (a, sigma) grid cell on `series` and reports
/// acceptance ratio and total pinball loss; the best cell minimizes the
/// loss.
pub fn tune_grid(
    base: &CqarConfig,
    series: &Series,
    grid_a: &[f64],
    grid_sigma: &[f64],
) -> Result<Vec<TuneCell>> {
    let mut cells = Vec::with_capacity(grid_a.len() * grid_sigma.len());
    for &a in grid_a {
        for &sigma in grid_sigma {
            let config = CqarConfig {
                regularizer: a,
                proposal_sd: sigma,
                ..base.clone()
            };
            let run = run_series(&config, series)?;
            cells.push(TuneCell {
                regularizer: a,
                proposal_sd: sigma,
                acceptance_ratio: run.acceptance_ratio,
                pinball_loss: run.ledger.cumulative(),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(alpha: f64) -> QuantileLevel {
        QuantileLevel::new(alpha).unwrap()
    }

    fn config(seed: u64) -> CqarConfig {
        CqarConfig {
            alpha: q(0.9),
            lag: 1,
            mcmc_iters: 200,
            burn_in: 50,
            proposal_sd: 0.5,
            regularizer: 1.0,
            seed,
            clamp_to_range: false,
        }
    }

    #[test]
    fn log_quasi_posterior_zero_theta() {
        let history = Series::new(vec![0.5, 1.0, 2.0, 1.5]).unwrap();
        let cfg = config(0);
        let got = log_quasi_posterior(&[0.0, 0.0], &history, 3, &cfg).unwrap();
        let alpha = cfg.alpha;
        let expected: f64 = -history.values()[1..]
            .iter()
            .map(|&y| pinball_loss(y, 0.0, alpha))
            .sum::<f64>()
            / 3.0_f64.sqrt();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_regularizer_shifts_by_l1_norm() {
        let history = Series::new(vec![0.5, 1.0, 2.0, 1.5]).unwrap();
        let theta = [0.25, -0.75]; // l1 norm 1
        let c1 = config(0);
        let mut c2 = config(0);
        c2.regularizer = 2.0;
        let v1 = log_quasi_posterior(&theta, &history, 3, &c1).unwrap();
        let v2 = log_quasi_posterior(&theta, &history, 3, &c2).unwrap();
        assert!((v1 - v2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_quasi_posterior_hand_computed_tiny_instance() {
        // p = 1, history (2, 1, 3, 2), t = 3 scored outcomes, alpha = 0.9
        let history = Series::new(vec![2.0, 1.0, 3.0, 2.0]).unwrap();
        let theta = [0.5, 0.5];
        let cfg = config(0);
        // predictions: 0.5 + 0.5*2 = 1.5, 0.5 + 0.5*1 = 1.0, 0.5 + 0.5*3 = 2.0
        // losses at alpha 0.9: y=1 < 1.5 -> 0.05; y=3 >= 1 -> 1.8; y=2 >= 2 -> 0
        let loss = 0.05 + 1.8 + 0.0;
        let expected = -loss / 3.0_f64.sqrt() - 1.0 * 1.0;
        let got = log_quasi_posterior(&theta, &history, 3, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn prior_only_at_t_zero() {
        let history = Series::new(vec![1.0]).unwrap();
        let cfg = config(0);
        let got = log_quasi_posterior(&[0.5, -0.5], &history, 0, &cfg).unwrap();
        assert!((got + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_proposal_keeps_chain_in_place() {
        let mut cfg = config(1);
        cfg.proposal_sd = 1e-12;
        let mut state = CqarState::new(cfg, &[1.0, 2.0]).unwrap();
        state.observe(3.0).unwrap_err(); // protocol: no pending prediction
        let gamma = state.mh_sweep().unwrap();
        // chain starts at zero and cannot move materially
        assert!(gamma.abs() < 1e-9);
        assert!(state.acceptance_ratio().unwrap() > 0.99);
    }

    #[test]
    fn huge_regularizer_concentrates_at_zero() {
        let mut cfg = config(2);
        cfg.regularizer = 1e6;
        cfg.mcmc_iters = 2000;
        cfg.burn_in = 500;
        cfg.proposal_sd = 0.1;
        let mut state = CqarState::new(cfg, &[5.0]).unwrap();
        let gamma = state.mh_sweep().unwrap();
        assert!(gamma.abs() < 0.01, "gamma {gamma}");
    }

    #[test]
    fn fixed_seed_predictions_are_identical() {
        let series = Series::new(vec![1.0, 0.5, 2.0, 1.5, 0.7, 1.2, 0.9, 1.8]).unwrap();
        let a = run_series(&config(42), &series).unwrap();
        let b = run_series(&config(42), &series).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.acceptance_ratio, b.acceptance_ratio);
    }

    #[test]
    fn protocol_order_is_enforced() {
        let mut state = CqarState::new(config(3), &[1.0]).unwrap();
        assert!(matches!(state.observe(1.0), Err(Error::ProtocolOrder(_))));
        state.mh_sweep().unwrap();
        assert!(matches!(state.mh_sweep(), Err(Error::ProtocolOrder(_))));
        state.observe(2.0).unwrap();
        assert!(matches!(state.observe(2.0), Err(Error::ProtocolOrder(_))));
    }

    #[test]
    fn ledger_matches_recorded_pairs() {
        let series =
            Series::new(vec![1.0, 0.5, 2.0, 1.5, 0.7, 1.2, 0.9, 1.8, 1.1, 0.6]).unwrap();
        let run = run_series(&config(4), &series).unwrap();
        let recomputed =
            crate::core::cumulative_loss(&run.outcomes, &run.predictions, q(0.9)).unwrap();
        assert!((recomputed.cumulative() - run.ledger.cumulative()).abs() < 1e-9);
        let per_step_sum: f64 = run.ledger.per_step().iter().sum();
        assert!((per_step_sum - run.ledger.cumulative()).abs() <= 1e-9 * (1.0 + per_step_sum));
    }

    #[test]
    fn observe_of_exact_prediction_adds_zero_loss() {
        let mut state = CqarState::new(config(5), &[1.0]).unwrap();
        let gamma = state.mh_sweep().unwrap();
        state.observe(gamma).unwrap();
        assert_eq!(state.ledger().per_step().last(), Some(&0.0));
    }

    #[test]
    fn regret_curve_identities() {
        let mut l = LossLedger::new();
        let mut c = LossLedger::new();
        for i in 0..10 {
            l.push(i as f64 + 1.0);
            c.push(i as f64);
        }
        let report = regret_curve(&l, &c).unwrap();
        assert!(report.avg_regret.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        assert!(
            (report.cumulative_regret - (l.cumulative() - c.cumulative())).abs() < 1e-9
        );

        let zero = regret_curve(&c, &c).unwrap();
        assert!(zero.avg_regret.iter().all(|&r| r == 0.0));

        let mut short = LossLedger::new();
        short.push(1.0);
        assert!(regret_curve(&l, &short).is_err());
    }

    #[test]
    fn regret_bound_plug_in_values() {
        let params = BoundParams {
            lower: 0.0,
            upper: 1.0,
            regularizer: 1.0,
            lag: 1,
            theta_l1: 0.0,
        };
        let v = regret_bound(&params, 1).unwrap();
        assert!((v - (2.0 * 2.0_f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn regret_bound_first_term_scales_as_inverse_sqrt_t() {
        let params = BoundParams {
            lower: 0.0,
            upper: 1.0,
            regularizer: 2.0,
            lag: 3,
            theta_l1: 1.5,
        };
        let first_term = |t: usize| {
            params.regularizer * params.theta_l1 / (t as f64).sqrt()
        };
        assert!((first_term(400) - first_term(100) / 2.0).abs() < 1e-12);
        // full bound decays to zero
        let big = regret_bound(
            &BoundParams {
                lower: -1.0,
                upper: 5.0,
                regularizer: 1.0,
                lag: 5,
                theta_l1: 1.0,
            },
            100_000_000,
        )
        .unwrap();
        assert!(big < 0.011, "bound {big}");
        let bigger = regret_bound(
            &BoundParams {
                lower: -1.0,
                upper: 5.0,
                regularizer: 1.0,
                lag: 5,
                theta_l1: 1.0,
            },
            1_000_000_000,
        )
        .unwrap();
        assert!(bigger < big);
    }

    #[test]
    fn acceptance_ratio_requires_proposals() {
        let state = CqarState::new(config(6), &[1.0]).unwrap();
        assert!(matches!(state.acceptance_ratio(), Err(Error::NoProposals)));
    }
}
