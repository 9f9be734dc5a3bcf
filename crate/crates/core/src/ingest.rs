//! Data pipeline: breach-report CSV parsing, same-day tie-breaking,
//! log transforms, train/test splitting and seeded synthetic generators.

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core::Series;
use crate::error::{Error, Result};

/// Organisation categories used by the breach report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrgType {
    BSF,
    BSR,
    BSO,
    EDU,
    GOV,
    MED,
    NGO,
}

impl OrgType {
    pub const ALL: [OrgType; 7] = [
        OrgType::BSF,
        OrgType::BSR,
        OrgType::BSO,
        OrgType::EDU,
        OrgType::GOV,
        OrgType::MED,
        OrgType::NGO,
    ];

    pub fn parse(s: &str) -> Option<OrgType> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BSF" => Some(OrgType::BSF),
            "BSR" => Some(OrgType::BSR),
            "BSO" => Some(OrgType::BSO),
            "EDU" => Some(OrgType::EDU),
            "GOV" => Some(OrgType::GOV),
            "MED" => Some(OrgType::MED),
            "NGO" => Some(OrgType::NGO),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrgType::BSF => "BSF",
            OrgType::BSR => "BSR",
            OrgType::BSO => "BSO",
            OrgType::EDU => "EDU",
            OrgType::GOV => "GOV",
            OrgType::MED => "MED",
            OrgType::NGO => "NGO",
        }
    }
}

/// One retained breach record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreachEvent {
    pub date: NaiveDate,
    pub org_type: OrgType,
    pub breach_type: String,
    pub records_affected: u64,
}

/// Maps report columns to their roles; export formats drift over time, so
/// this is configuration rather than code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub breach_type: String,
    pub records: String,
    pub org_type: String,
    /// Rows whose breach-type column does not contain this value are dropped.
    pub hack_filter: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            date: "Date Made Public".into(),
            breach_type: "Type of breach".into(),
            records: "Total Records".into(),
            org_type: "Type of organization".into(),
            hack_filter: "HACK".into(),
        }
    }
}

/// Result of parsing an export: retained hacking events plus the number of
/// incomplete/unknown rows dropped along the way.
#[derive(Debug, Clone)]
pub struct ParsedEvents {
    pub events: Vec<BreachEvent>,
    pub dropped: usize,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d", "%m/%d/%Y", "%m/%d/%y", "%B %d, %Y", "%d-%b-%y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    None
}

fn parse_records(s: &str) -> Option<u64> {
    let cleaned: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse().ok().filter(|&n| n >= 1)
}

/// Reads a breach-report CSV, keeping only complete hacking rows. Rows with
/// missing or unparseable date, size or organisation are dropped and
/// counted.
pub fn parse_prc(path: &Path, map: &ColumnMap) -> Result<ParsedEvents> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| Error::Parse(format!("column {name:?} not found in header")))
    };
    let date_idx = col(&map.date)?;
    let type_idx = col(&map.breach_type)?;
    let records_idx = col(&map.records)?;
    let org_idx = col(&map.org_type)?;

    let mut events = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let breach_type = field(type_idx).trim().to_string();
        if !breach_type
            .to_ascii_uppercase()
            .contains(&map.hack_filter.to_ascii_uppercase())
        {
            continue; // not a hacking breach: out of scope, not "dropped"
        }
        match (
            parse_date(field(date_idx)),
            parse_records(field(records_idx)),
            OrgType::parse(field(org_idx)),
        ) {
            (Some(date), Some(records_affected), Some(org_type)) => {
                events.push(BreachEvent {
                    date,
                    org_type,
                    breach_type,
                    records_affected,
                });
            }
            _ => dropped += 1,
        }
    }
    if events.is_empty() {
        return Err(Error::NoRows(
            "no complete hacking breaches in input".into(),
        ));
    }
    events.sort_by_key(|e| e.date);
    Ok(ParsedEvents { events, dropped })
}

/// Log-transformed series derived from an event chronology.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    pub log_sizes: Series,
    pub log_interarrivals: Series,
    pub event_order_seed: u64,
    /// Events in their tie-broken temporal order.
    pub ordered_events: Vec<BreachEvent>,
    /// Fractional-day timestamps matching `ordered_events`.
    pub event_times: Vec<f64>,
}

/// Breaks same-day ties with seeded uniform day-fractions, orders events by
/// them, and emits the natural-log size and inter-arrival series.
pub fn prepare(events: &[BreachEvent], seed: u64) -> Result<PreparedSeries> {
    if events.is_empty() {
        return Err(Error::EmptyInput("breach events"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, BreachEvent)> = Vec::with_capacity(events.len());
    let mut seen = HashSet::new();
    for e in events {
        let day = e.date.signed_duration_since(epoch()).num_days() as f64;
        let mut fraction: f64 = rng.random();
        // regenerate on the (measure-zero) chance of an exact collision
        while !seen.insert((e.date, fraction.to_bits())) {
            fraction = rng.random();
        }
        keyed.push((day + fraction, e.clone()));
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let event_times: Vec<f64> = keyed.iter().map(|(t, _)| *t).collect();
    let ordered_events: Vec<BreachEvent> = keyed.into_iter().map(|(_, e)| e).collect();

    let log_sizes = Series::new(
        ordered_events
            .iter()
            .map(|e| (e.records_affected as f64).ln())
            .collect(),
    )?;
    let mut gaps = Vec::with_capacity(event_times.len().saturating_sub(1));
    for w in event_times.windows(2) {
        let gap = w[1] - w[0];
        if gap <= 0.0 {
            return Err(Error::Parse("non-positive inter-arrival time".into()));
        }
        gaps.push(gap.ln());
    }
    if gaps.is_empty() {
        return Err(Error::TooShort { need: 2, got: 1 });
    }
    let log_interarrivals = Series::new(gaps)?;
    Ok(PreparedSeries {
        log_sizes,
        log_interarrivals,
        event_order_seed: seed,
        ordered_events,
        event_times,
    })
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

/// Contiguous temporal split: train takes the first `floor(frac * N)`
/// points.
pub fn split(series: &Series, train_frac: f64) -> Result<(Series, Series)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must be in (0,1), got {train_frac}"
        )));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::TooShort { need: 2, got: n });
    }
    let n_train = (train_frac * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParameter(format!(
            "split leaves an empty side: {n_train}/{} of {n}",
            n - n_train
        )));
    }
    let train = Series::new(series.values()[..n_train].to_vec())?;
    let test = Series::new(series.values()[n_train..].to_vec())?;
    Ok((train, test))
}

/// A coefficient function on (0,1) given as a sorted lookup table with
/// linear interpolation; used to sample random-coefficient autoregressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl CoefficientTable {
    pub fn constant(v: f64) -> Self {
        CoefficientTable {
            knots: vec![0.0, 1.0],
            values: vec![v, v],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots.len() != self.values.len() {
            return Err(Error::InvalidParameter(
                "coefficient table needs matching knots/values, at least two".into(),
            ));
        }
        if self.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "coefficient table knots must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn eval(&self, u: f64) -> f64 {
        let n = self.knots.len();
        if u <= self.knots[0] {
            return self.values[0];
        }
        if u >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let i = self.knots.partition_point(|&k| k <= u) - 1;
        let (k0, k1) = (self.knots[i], self.knots[i + 1]);
        let w = (u - k0) / (k1 - k0);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Specification of a synthetic autoregressive process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// `y_t = c + phi * y_{t-1} + noise_sd * z_t`, Gaussian innovations.
    GaussianAr1 {
        phi: f64,
        intercept: f64,
        noise_sd: f64,
        n: usize,
        seed: u64,
    },
    /// `y_t = theta0(U_t) + theta1(U_t) * y_{t-1}` with iid uniform drivers.
    Qar1 {
        theta0: CoefficientTable,
        theta1: CoefficientTable,
        n: usize,
        seed: u64,
    },
}

const GENERATOR_BURN_IN: usize = 200;

/// Generates a seeded realization of the requested process, discarding a
/// 200-step burn-in.
pub fn generate(spec: &SyntheticSpec) -> Result<Series> {
    match spec {
        SyntheticSpec::GaussianAr1 {
            phi,
            intercept,
            noise_sd,
            n,
            seed,
        } => {
            if phi.abs() >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "nonstationary AR(1): |phi| = {} >= 1",
                    phi.abs()
                )));
            }
            if *n == 0 {
                return Err(Error::InvalidParameter("n must be positive".into()));
            }
            if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                return Err(Error::InvalidParameter("noise_sd must be >= 0".into()));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let mut values = Vec::with_capacity(n + GENERATOR_BURN_IN);
            let mut y = 0.0;
            for _ in 0..(n + GENERATOR_BURN_IN) {
                let z: f64 = StandardNormal.sample(&mut rng);
                y = intercept + phi * y + noise_sd * z;
                values.push(y);
            }
            Series::new(values.split_off(GENERATOR_BURN_IN))
        }
        SyntheticSpec::Qar1 {
            theta0,
            theta1,
            n,
            seed,
        } => {
            theta0.validate()?;
            theta1.validate()?;
            if *n == 0 {
                return Err(Error::InvalidParameter("n must be positive".into()));
            }
            if theta1.values.iter().any(|v| v.abs() >= 1.0) {
                return Err(Error::InvalidParameter(
                    "qar1 slope table must stay inside (-1, 1) for stationarity".into(),
                ));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let mut values = Vec::with_capacity(n + GENERATOR_BURN_IN);
            let mut y = 0.0;
            for _ in 0..(n + GENERATOR_BURN_IN) {
                let u: f64 = rng.random();
                y = theta0.eval(u) + theta1.eval(u) * y;
                values.push(y);
            }
            Series::new(values.split_off(GENERATOR_BURN_IN))
        }
    }
}

/// Summary row of the per-organisation statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgStats {
    pub org_type: String,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
    pub count: usize,
}

fn summarize(org: &str, values: &[f64]) -> OrgStats {
    let count = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (count as f64 - 1.0).max(1.0);
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        (sorted[count / 2 - 1] + sorted[count / 2]) / 2.0
    };
    OrgStats {
        org_type: org.to_string(),
        min: sorted[0],
        median,
        mean,
        sd: var.sqrt(),
        max: sorted[count - 1],
        count,
    }
}

/// Per-organisation (plus total) summary statistics of breach sizes and of
/// inter-arrival times in the tie-broken order.
pub fn org_stats(prepared: &PreparedSeries) -> (Vec<OrgStats>, Vec<OrgStats>) {
    let mut size_rows = Vec::new();
    let mut gap_rows = Vec::new();
    let all_sizes: Vec<f64> = prepared
        .ordered_events
        .iter()
        .map(|e| e.records_affected as f64)
        .collect();
    let all_gaps: Vec<f64> = prepared
        .event_times
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    for org in OrgType::ALL {
        let sizes: Vec<f64> = prepared
            .ordered_events
            .iter()
            .filter(|e| e.org_type == org)
            .map(|e| e.records_affected as f64)
            .collect();
        let times: Vec<f64> = prepared
            .ordered_events
            .iter()
            .zip(&prepared.event_times)
            .filter(|(e, _)| e.org_type == org)
            .map(|(_, &t)| t)
            .collect();
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if !sizes.is_empty() {
            size_rows.push(summarize(org.as_str(), &sizes));
        }
        if !gaps.is_empty() {
            gap_rows.push(summarize(org.as_str(), &gaps));
        }
    }
    size_rows.push(summarize("Total", &all_sizes));
    if !all_gaps.is_empty() {
        gap_rows.push(summarize("Total", &all_gaps));
    }
    (size_rows, gap_rows)
}
