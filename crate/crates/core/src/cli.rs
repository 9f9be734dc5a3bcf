//! Command-line front end: wires ingestion, diagnostics, both estimators
//! and the coverage backtests into subcommands that emit plot-ready CSV/JSON
//! artifacts. Every run writes a manifest recording flags, seed and input
//! digests so outputs are reproducible byte-for-byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qvar::backtest::{self, BacktestReport};
use qvar::core::pinball_loss;
use qvar::cqar::{self, CqarConfig, CqarState};
use qvar::diagnostics;
use qvar::ingest::{self, ColumnMap, SyntheticSpec};
use qvar::qar::{self, QarModel};
use qvar::{Error, QuantileLevel, Result, Series};

const GRID_A: [f64; 3] = [0.1, 0.5, 1.0];
const GRID_SIGMA: [f64; 3] = [0.5, 0.7, 1.0];
const REPRO_ALPHAS: [f64; 3] = [0.90, 0.92, 0.95];

#[derive(Parser)]
#[command(name = "qvar", version, about = "Value-at-Risk estimation for univariate time series")]
struct Cli {
    /// RNG seed shared by every stochastic stage of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Significance level for reject/fail-to-reject decisions.
    #[arg(long, global = true, default_value_t = 0.05)]
    significance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a breach-report CSV into log-size and log-inter-arrival series.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic autoregressive series.
    Generate(GenerateArgs),
    /// Per-organisation summary statistics of a breach-report CSV.
    Stats(StatsArgs),
    /// Correlograms and BIC lag selection for a value series.
    Explore(ExploreArgs),
    /// Fit a quantile autoregression and forecast over the test split.
    FitQar(FitQarArgs),
    /// Run the online learner over a value series.
    RunCqar(RunCqarArgs),
    /// Coverage backtests of a forecast CSV.
    Backtest(BacktestArgs),
    /// Full pipeline: ingest, explore, fit, tune, online run, backtests.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Breach-report CSV export.
    #[arg(long)]
    input: PathBuf,
    /// Column-name mapping (TOML or JSON); defaults cover the standard export.
    #[arg(long)]
    column_map: Option<PathBuf>,
    #[arg(long, default_value = "sizes.csv")]
    out_sizes: String,
    #[arg(long, default_value = "times.csv")]
    out_times: String,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Process {
    GaussianAr1,
    Qar1,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    process: Process,
    /// AR(1) slope (gaussian-ar1 only).
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    #[arg(long, default_value_t = 0.0)]
    intercept: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Series length after burn-in.
    #[arg(long)]
    n: usize,
    /// JSON file with {"theta0": {...}, "theta1": {...}} coefficient tables (qar1 only).
    #[arg(long)]
    coeffs: Option<PathBuf>,
    #[arg(long, default_value = "series.csv")]
    output: String,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    column_map: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    /// Single-column value CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    max_lag: usize,
    #[arg(long, default_value_t = 8)]
    max_p: usize,
    /// Quantile level used by the BIC lag scan.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Args)]
struct FitQarArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    lag: usize,
    /// Fraction of the series used for fitting; the rest is forecast.
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
}

#[derive(Args)]
struct RunCqarArgs {
    #[arg(long)]
    input: PathBuf,
    /// Quantile level; repeat the flag for several levels.
    #[arg(long, default_values_t = [0.9])]
    alpha: Vec<f64>,
    #[arg(long)]
    lag: usize,
    /// MCMC iterations per step (M).
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Discarded iterations per step (M0).
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    /// Proposal standard deviation.
    #[arg(long, default_value_t = 0.7)]
    sigma: f64,
    /// L1 regularization weight a.
    #[arg(long, default_value_t = 1.0)]
    reg_a: f64,
    /// Run the (a, sigma) tuning grid on the training split instead of a
    /// normal run, and print the grid.
    #[arg(long)]
    tune: bool,
    /// Training fraction for --tune.
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    /// Fitted model JSON to compare against; adds a regret CSV per level.
    #[arg(long)]
    comparator: Option<PathBuf>,
    /// Clamp predictions to the running outcome range.
    #[arg(long)]
    clamp: bool,
}

#[derive(Args)]
struct BacktestArgs {
    /// Forecast CSV with a `y` column and a `var_forecast` or `gamma` column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Breach-report CSV export.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    column_map: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    max_p: usize,
    #[arg(long, default_value_t = 20)]
    max_lag: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
}

/// Bookkeeping shared by every subcommand: output directory, digests of the
/// inputs read, and the list of files written, flushed to `manifest.json`.
struct RunContext {
    out_dir: PathBuf,
    seed: u64,
    significance: f64,
    command: &'static str,
    flags: Vec<String>,
    input_digests: Vec<InputDigest>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'static str,
    flags: &'a [String],
    seed: u64,
    input_digests: &'a [InputDigest],
    outputs: &'a [String],
}

impl RunContext {
    fn new(cli: &Cli, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&cli.out)?;
        if !(cli.significance > 0.0 && cli.significance < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "significance must be in (0,1), got {}",
                cli.significance
            )));
        }
        Ok(RunContext {
            out_dir: cli.out.clone(),
            seed: cli.seed,
            significance: cli.significance,
            command,
            flags: std::env::args().skip(1).collect(),
            input_digests: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn register_input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.input_digests.push(InputDigest {
            path: path.display().to_string(),
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    fn write_text(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, content.as_bytes())?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Parse(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write_text(name, &text)?;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            flags: &self.flags,
            seed: self.seed,
            input_digests: &self.input_digests,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Parse(format!("serialization failed: {e}")))?;
        text.push('\n');
        fs::write(self.out_dir.join("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(&cli, args),
        Command::Generate(args) => cmd_generate(&cli, args),
        Command::Stats(args) => cmd_stats(&cli, args),
        Command::Explore(args) => cmd_explore(&cli, args),
        Command::FitQar(args) => cmd_fit_qar(&cli, args),
        Command::RunCqar(args) => cmd_run_cqar(&cli, args),
        Command::Backtest(args) => cmd_backtest(&cli, args),
        Command::Reproduce(args) => cmd_reproduce(&cli, args),
    }
}

/// 2 when an input file is missing (the message names the path), 1 for
/// every other failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

// ---------------------------------------------------------------- helpers

fn quantile(alpha: f64) -> Result<QuantileLevel> {
    QuantileLevel::new(alpha)
}

fn load_column_map(path: Option<&PathBuf>) -> Result<ColumnMap> {
    let Some(path) = path else {
        return Ok(ColumnMap::default());
    };
    if !path.is_file() {
        return Err(Error::MissingFile(path.clone()));
    }
    let text = fs::read_to_string(path)?;
    let is_toml = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("toml"))
        .unwrap_or(false);
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::Parse(format!("column map: {e}")))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("column map: {e}")))
    }
}

/// Reads a single-column value CSV (header `value`, case-insensitive; a
/// lone unnamed column is also accepted).
fn read_value_series(path: &Path) -> Result<Series> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("value"))
        .or(if headers.len() == 1 { Some(0) } else { None })
        .ok_or_else(|| Error::Parse("no `value` column in input CSV".into()))?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = record.get(idx).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::Parse(format!("bad numeric value {field:?}")))?;
        values.push(v);
    }
    Series::new(values)
}

fn value_csv(values: &[f64]) -> String {
    let mut out = String::from("value\n");
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    out
}

fn correlogram_csv(result: &diagnostics::CorrelogramResult) -> String {
    let mut out = String::from("lag,value,band\n");
    for (lag, value) in result.lags.iter().zip(&result.values) {
        out.push_str(&format!("{lag},{value},{}\n", result.confidence_band));
    }
    out
}

fn org_stats_csv(rows: &[ingest::OrgStats]) -> String {
    let mut out = String::from("org,min,median,mean,sd,max,count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.org_type, r.min, r.median, r.mean, r.sd, r.max, r.count
        ));
    }
    out
}

fn tune_csv(cells: &[cqar::TuneCell]) -> String {
    let mut out = String::from("a,sigma,acceptance_ratio,pinball_loss\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.regularizer, c.proposal_sd, c.acceptance_ratio, c.pinball_loss
        ));
    }
    out
}

/// One row of the coverage tables, serialized with the published column
/// names.
#[derive(Serialize)]
struct CoverageRow {
    method: String,
    quantile: f64,
    exp: usize,
    act: usize,
    #[serde(rename = "uc.LRp")]
    uc_lrp: f64,
    #[serde(rename = "cc.LRp")]
    cc_lrp: f64,
    #[serde(rename = "uc.D")]
    uc_d: String,
    #[serde(rename = "cc.D")]
    cc_d: String,
}

impl CoverageRow {
    fn new(method: String, report: &BacktestReport) -> Self {
        CoverageRow {
            method,
            quantile: report.alpha.value(),
            exp: report.expected_violations,
            act: report.actual_violations,
            uc_lrp: report.uc_pvalue,
            cc_lrp: report.cc_pvalue,
            uc_d: report.uc_decision.as_str().to_string(),
            cc_d: report.cc_decision.as_str().to_string(),
        }
    }
}

fn print_coverage(rows: &[CoverageRow]) {
    println!(
        "{:<10} {:>8} {:>5} {:>5} {:>8} {:>8} {:>5} {:>5}",
        "method", "quantile", "exp", "act", "uc.LRp", "cc.LRp", "uc.D", "cc.D"
    );
    for r in rows {
        println!(
            "{:<10} {:>8.2} {:>5} {:>5} {:>8.4} {:>8.4} {:>5} {:>5}",
            r.method, r.quantile, r.exp, r.act, r.uc_lrp, r.cc_lrp, r.uc_d, r.cc_d
        );
    }
}

#[derive(Serialize)]
struct CoverageTable {
    lag: usize,
    n_train: usize,
    n_test: usize,
    rows: Vec<CoverageRow>,
}

// ------------------------------------------------------------ subcommands

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "ingest")?;
    ctx.register_input(&args.input)?;
    let map = load_column_map(args.column_map.as_ref())?;
    let parsed = ingest::parse_prc(&args.input, &map)?;
    let prepared = ingest::prepare(&parsed.events, ctx.seed)?;
    ctx.write_text(&args.out_sizes, &value_csv(prepared.log_sizes.values()))?;
    ctx.write_text(
        &args.out_times,
        &value_csv(prepared.log_interarrivals.values()),
    )?;
    ctx.finish()?;
    println!(
        "events={} dropped={} sizes={} times={}",
        parsed.events.len(),
        parsed.dropped,
        prepared.log_sizes.len(),
        prepared.log_interarrivals.len()
    );
    Ok(())
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "generate")?;
    let spec = match args.process {
        Process::GaussianAr1 => SyntheticSpec::GaussianAr1 {
            phi: args.phi,
            intercept: args.intercept,
            noise_sd: args.noise_sd,
            n: args.n,
            seed: ctx.seed,
        },
        Process::Qar1 => {
            let path = args.coeffs.as_ref().ok_or_else(|| {
                Error::InvalidParameter("qar1 needs --coeffs with two coefficient tables".into())
            })?;
            ctx.register_input(path)?;
            #[derive(serde::Deserialize)]
            struct Tables {
                theta0: ingest::CoefficientTable,
                theta1: ingest::CoefficientTable,
            }
            let tables: Tables = serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Error::Parse(format!("coefficient tables: {e}")))?;
            SyntheticSpec::Qar1 {
                theta0: tables.theta0,
                theta1: tables.theta1,
                n: args.n,
                seed: ctx.seed,
            }
        }
    };
    let series = ingest::generate(&spec)?;
    ctx.write_text(&args.output, &value_csv(series.values()))?;
    ctx.finish()?;
    println!("wrote {} values to {}", series.len(), args.output);
    Ok(())
}

fn cmd_stats(cli: &Cli, args: &StatsArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "stats")?;
    ctx.register_input(&args.input)?;
    let map = load_column_map(args.column_map.as_ref())?;
    let parsed = ingest::parse_prc(&args.input, &map)?;
    let prepared = ingest::prepare(&parsed.events, ctx.seed)?;
    let (size_rows, gap_rows) = ingest::org_stats(&prepared);
    ctx.write_text("stats_sizes.csv", &org_stats_csv(&size_rows))?;
    ctx.write_text("stats_times.csv", &org_stats_csv(&gap_rows))?;
    ctx.finish()?;
    println!("breach sizes (records):");
    print!("{}", org_stats_csv(&size_rows));
    println!("inter-arrival times (days):");
    print!("{}", org_stats_csv(&gap_rows));
    Ok(())
}

fn cmd_explore(cli: &Cli, args: &ExploreArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "explore")?;
    ctx.register_input(&args.input)?;
    let series = read_value_series(&args.input)?;
    let alpha = quantile(args.alpha)?;
    let acf = diagnostics::acf(&series, args.max_lag)?;
    let pacf = diagnostics::pacf(&series, args.max_lag)?;
    let selection = diagnostics::select_lag(&series, alpha, args.max_p)?;
    ctx.write_text("acf.csv", &correlogram_csv(&acf))?;
    ctx.write_text("pacf.csv", &correlogram_csv(&pacf))?;
    let mut bic = String::from("p,bic\n");
    for (p, v) in selection.candidate_lags.iter().zip(&selection.bic_values) {
        bic.push_str(&format!("{p},{v}\n"));
    }
    ctx.write_text("bic.csv", &bic)?;
    #[derive(Serialize)]
    struct Summary {
        n_obs: usize,
        alpha: f64,
        max_p: usize,
        chosen_lag: usize,
    }
    ctx.write_json(
        "summary.json",
        &Summary {
            n_obs: series.len(),
            alpha: args.alpha,
            max_p: args.max_p,
            chosen_lag: selection.chosen_lag,
        },
    )?;
    ctx.finish()?;
    println!("chosen lag: {}", selection.chosen_lag);
    Ok(())
}

fn cmd_fit_qar(cli: &Cli, args: &FitQarArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "fit-qar")?;
    ctx.register_input(&args.input)?;
    let series = read_value_series(&args.input)?;
    let alpha = quantile(args.alpha)?;
    let (train, test) = ingest::split(&series, args.train_frac)?;
    let model = qar::fit(&train, args.lag, alpha)?;
    let n_train = train.len();
    let forecasts = qar::forecast_path(&model, &series, n_train, series.len())?;
    ctx.write_json("model.json", &model)?;
    let mut csv = String::from("t,y,var_forecast,violation\n");
    for (i, gamma) in forecasts.iter().enumerate() {
        let t = n_train + i;
        let y = series.values()[t];
        csv.push_str(&format!(
            "{t},{y},{gamma},{}\n",
            if y > *gamma { 1 } else { 0 }
        ));
    }
    ctx.write_text("forecasts.csv", &csv)?;
    ctx.finish()?;
    println!(
        "split: {} train / {} test; train loss {}",
        n_train,
        test.len(),
        model.train_loss
    );
    Ok(())
}

/// Drives the online learner over `series`, recording per-step rows.
fn cqar_rows(
    config: &CqarConfig,
    series: &Series,
) -> Result<(String, Vec<f64>, Vec<f64>, f64)> {
    let p = config.lag;
    if series.len() < p + 1 {
        return Err(Error::TooShort {
            need: p + 1,
            got: series.len(),
        });
    }
    let mut state = CqarState::new(config.clone(), &series.values()[..p])?;
    let mut csv = String::from("t,y,gamma,loss,cumulative_loss,acceptance_ratio\n");
    let mut predictions = Vec::new();
    let mut outcomes = Vec::new();
    for (i, &y) in series.values()[p..].iter().enumerate() {
        let gamma = state.mh_sweep()?;
        state.observe(y)?;
        let t = p + i;
        let loss = pinball_loss(y, gamma, config.alpha);
        csv.push_str(&format!(
            "{t},{y},{gamma},{loss},{},{}\n",
            state.ledger().cumulative(),
            state.acceptance_ratio()?
        ));
        predictions.push(gamma);
        outcomes.push(y);
    }
    let ratio = state.acceptance_ratio()?;
    Ok((csv, predictions, outcomes, ratio))
}

fn regret_csv(
    alpha: QuantileLevel,
    reg_a: f64,
    comparator: &QarModel,
    predictions: &[f64],
    outcomes: &[f64],
    series: &Series,
    first_scored: usize,
) -> Result<String> {
    let comp_forecasts =
        qar::forecast_path(comparator, series, first_scored, series.len())?;
    let mut learner = qvar::core::LossLedger::new();
    let mut comp = qvar::core::LossLedger::new();
    for ((&y, &g), &c) in outcomes.iter().zip(predictions).zip(&comp_forecasts) {
        learner.push(pinball_loss(y, g, alpha));
        comp.push(pinball_loss(y, c, alpha));
    }
    let curve = cqar::regret_curve(&learner, &comp)?;
    let theta_l1: f64 = comparator.theta.iter().map(|v| v.abs()).sum();
    let bound = cqar::bound_series(reg_a, comparator.lag, theta_l1, outcomes)?;
    let mut csv = String::from("t,avg_regret,bound\n");
    for (i, (r, b)) in curve.avg_regret.iter().zip(&bound).enumerate() {
        csv.push_str(&format!("{},{r},{b}\n", i + 1));
    }
    Ok(csv)
}

fn cmd_run_cqar(cli: &Cli, args: &RunCqarArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "run-cqar")?;
    ctx.register_input(&args.input)?;
    let series = read_value_series(&args.input)?;

    if args.tune {
        let (train, _) = ingest::split(&series, args.train_frac)?;
        let alpha = quantile(args.alpha[0])?;
        let base = CqarConfig {
            alpha,
            lag: args.lag,
            mcmc_iters: args.iters,
            burn_in: args.burn_in,
            proposal_sd: args.sigma,
            regularizer: args.reg_a,
            seed: ctx.seed,
            clamp_to_range: args.clamp,
        };
        let cells = cqar::tune_grid(&base, &train, &GRID_A, &GRID_SIGMA)?;
        let text = tune_csv(&cells);
        ctx.write_text("tune.csv", &text)?;
        ctx.finish()?;
        print!("{text}");
        return Ok(());
    }

    let comparator: Option<QarModel> = match &args.comparator {
        Some(path) => {
            ctx.register_input(path)?;
            Some(
                serde_json::from_str(&fs::read_to_string(path)?)
                    .map_err(|e| Error::Parse(format!("comparator model: {e}")))?,
            )
        }
        None => None,
    };
    if let Some(m) = &comparator {
        if m.lag > args.lag {
            return Err(Error::InvalidParameter(format!(
                "comparator lag {} exceeds learner lag {}",
                m.lag, args.lag
            )));
        }
    }

    for &a in &args.alpha {
        let alpha = quantile(a)?;
        let config = CqarConfig {
            alpha,
            lag: args.lag,
            mcmc_iters: args.iters,
            burn_in: args.burn_in,
            proposal_sd: args.sigma,
            regularizer: args.reg_a,
            seed: ctx.seed,
            clamp_to_range: args.clamp,
        };
        let (csv, predictions, outcomes, ratio) = cqar_rows(&config, &series)?;
        ctx.write_text(&format!("cqar_{a:.2}.csv"), &csv)?;
        println!(
            "alpha {a:.2}: {} scored steps (first {} used as context), acceptance ratio {ratio:.4}",
            outcomes.len(),
            args.lag
        );
        if let Some(m) = &comparator {
            let csv = regret_csv(
                alpha,
                args.reg_a,
                m,
                &predictions,
                &outcomes,
                &series,
                args.lag,
            )?;
            ctx.write_text(&format!("regret_{a:.2}.csv"), &csv)?;
        }
    }
    ctx.finish()?;
    Ok(())
}

fn cmd_backtest(cli: &Cli, args: &BacktestArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "backtest")?;
    ctx.register_input(&args.input)?;
    let alpha = quantile(args.alpha)?;

    let mut reader = csv::Reader::from_path(&args.input)?;
    let headers = reader.headers()?.clone();
    let find = |names: &[&str]| {
        headers.iter().position(|h| {
            names
                .iter()
                .any(|n| h.trim().eq_ignore_ascii_case(n))
        })
    };
    let y_idx = find(&["y"])
        .ok_or_else(|| Error::Parse("no `y` column in forecast CSV".into()))?;
    let f_idx = find(&["var_forecast", "gamma"]).ok_or_else(|| {
        Error::Parse("no `var_forecast` or `gamma` column in forecast CSV".into())
    })?;
    let mut outcomes = Vec::new();
    let mut forecasts = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| -> Result<f64> {
            let field = record.get(i).unwrap_or("").trim();
            field
                .parse()
                .map_err(|_| Error::Parse(format!("bad numeric value {field:?}")))
        };
        outcomes.push(get(y_idx)?);
        forecasts.push(get(f_idx)?);
    }
    let records = backtest::extract_violations(&outcomes, &forecasts)?;
    let report = backtest::run_backtest(&records, alpha, ctx.significance)?;
    let row = CoverageRow::new("forecast".into(), &report);
    #[derive(Serialize)]
    struct Out {
        #[serde(flatten)]
        row: CoverageRow,
        #[serde(rename = "uc.LR")]
        uc_lr: f64,
        #[serde(rename = "cc.LR")]
        cc_lr: f64,
        n_obs: usize,
        significance: f64,
    }
    ctx.write_json(
        "backtest.json",
        &Out {
            uc_lr: report.uc_stat,
            cc_lr: report.cc_stat,
            n_obs: report.n_obs,
            significance: report.significance,
            row: CoverageRow::new("forecast".into(), &report),
        },
    )?;
    ctx.finish()?;
    print_coverage(std::slice::from_ref(&row));
    Ok(())
}

/// QAR coverage table on the test split of one log series.
fn qar_coverage(
    series: &Series,
    lag: usize,
    n_train: usize,
    significance: f64,
) -> Result<CoverageTable> {
    let train = Series::new(series.values()[..n_train].to_vec())?;
    let mut rows = Vec::new();
    for &a in &REPRO_ALPHAS {
        let alpha = quantile(a)?;
        let model = qar::fit(&train, lag, alpha)?;
        let forecasts = qar::forecast_path(&model, series, n_train, series.len())?;
        let records =
            backtest::extract_violations(&series.values()[n_train..], &forecasts)?;
        let report = backtest::run_backtest(&records, alpha, significance)?;
        rows.push(CoverageRow::new(format!("QAR({lag})"), &report));
    }
    Ok(CoverageTable {
        lag,
        n_train,
        n_test: series.len() - n_train,
        rows,
    })
}

#[derive(Serialize)]
struct DiffCheck {
    check: String,
    expected: String,
    observed: String,
    matches: bool,
}

fn check(name: &str, expected: impl ToString, observed: impl ToString) -> DiffCheck {
    let expected = expected.to_string();
    let observed = observed.to_string();
    DiffCheck {
        check: name.to_string(),
        matches: expected == observed,
        expected,
        observed,
    }
}

fn cmd_reproduce(cli: &Cli, args: &ReproduceArgs) -> Result<()> {
    let mut ctx = RunContext::new(cli, "reproduce")?;
    if !args.input.is_file() {
        eprintln!(
            "the breach chronology is not bundled: download the data-breach CSV export \
             from the Privacy Rights Clearinghouse and pass its path via --input"
        );
        return Err(Error::MissingFile(args.input.clone()));
    }
    ctx.register_input(&args.input)?;
    let map = load_column_map(args.column_map.as_ref())?;
    let parsed = ingest::parse_prc(&args.input, &map)?;
    let prepared = ingest::prepare(&parsed.events, ctx.seed)?;
    ctx.write_text("sizes.csv", &value_csv(prepared.log_sizes.values()))?;
    ctx.write_text("times.csv", &value_csv(prepared.log_interarrivals.values()))?;

    let mut chosen = std::collections::BTreeMap::new();
    let mut tables = Vec::new();
    for (name, series) in [
        ("sizes", &prepared.log_sizes),
        ("times", &prepared.log_interarrivals),
    ] {
        let (train, _) = ingest::split(series, args.train_frac)?;
        // keep every candidate fittable on short fixtures
        let max_p = args
            .max_p
            .min(train.len().saturating_sub(3) / 2)
            .max(1);
        let max_lag = args.max_lag.min(train.len().saturating_sub(2)).max(1);
        let acf = diagnostics::acf(&train, max_lag)?;
        let pacf = diagnostics::pacf(&train, max_lag)?;
        ctx.write_text(&format!("acf_{name}.csv"), &correlogram_csv(&acf))?;
        ctx.write_text(&format!("pacf_{name}.csv"), &correlogram_csv(&pacf))?;
        let selection = diagnostics::select_lag(&train, quantile(0.5)?, max_p)?;
        let mut bic = String::from("p,bic\n");
        for (p, v) in selection.candidate_lags.iter().zip(&selection.bic_values) {
            bic.push_str(&format!("{p},{v}\n"));
        }
        ctx.write_text(&format!("bic_{name}.csv"), &bic)?;
        chosen.insert(name, selection.chosen_lag);
        let table = qar_coverage(series, selection.chosen_lag, train.len(), ctx.significance)?;
        println!("QAR coverage, log {name} (lag {}):", selection.chosen_lag);
        print_coverage(&table.rows);
        tables.push(table);
    }
    let table4 = tables.pop().unwrap();
    let table3 = tables.pop().unwrap();
    ctx.write_json("table3.json", &table3)?;
    ctx.write_json("table4.json", &table4)?;

    // hyperparameter grid for the online learner, scored on the
    // inter-arrival training split
    let times = &prepared.log_interarrivals;
    let (times_train, times_test) = ingest::split(times, args.train_frac)?;
    let lag_times = chosen["times"];
    let base = CqarConfig {
        alpha: quantile(0.9)?,
        lag: lag_times,
        mcmc_iters: args.iters,
        burn_in: args.burn_in,
        proposal_sd: 0.7,
        regularizer: 1.0,
        seed: ctx.seed,
        clamp_to_range: false,
    };
    let cells = cqar::tune_grid(&base, &times_train, &GRID_A, &GRID_SIGMA)?;
    ctx.write_text("table5.csv", &tune_csv(&cells))?;
    let best = cells
        .iter()
        .min_by(|a, b| a.pinball_loss.partial_cmp(&b.pinball_loss).unwrap())
        .unwrap();
    println!(
        "tuning grid: best a={} sigma={} (loss {})",
        best.regularizer, best.proposal_sd, best.pinball_loss
    );

    // online learner on the test split only: the first `lag` test
    // observations are its entire context
    let mut cqar_rows_out = Vec::new();
    let mut regret_text = None;
    for &a in &REPRO_ALPHAS {
        let alpha = quantile(a)?;
        let config = CqarConfig {
            alpha,
            proposal_sd: best.proposal_sd,
            regularizer: best.regularizer,
            ..base.clone()
        };
        let (csv, predictions, outcomes, _) = cqar_rows(&config, &times_test)?;
        ctx.write_text(&format!("cqar_{a:.2}.csv"), &csv)?;
        let records = backtest::extract_violations(&outcomes, &predictions)?;
        let report = backtest::run_backtest(&records, alpha, ctx.significance)?;
        cqar_rows_out.push(CoverageRow::new(format!("CQAR({lag_times})"), &report));
        if a == REPRO_ALPHAS[0] {
            let comparator = qar::fit(&times_train, lag_times, alpha)?;
            regret_text = Some(regret_csv(
                alpha,
                best.regularizer,
                &comparator,
                &predictions,
                &outcomes,
                &times_test,
                lag_times,
            )?);
        }
    }
    println!("CQAR coverage, log times test split:");
    print_coverage(&cqar_rows_out);
    ctx.write_json(
        "table6.json",
        &CoverageTable {
            lag: lag_times,
            n_train: 0,
            n_test: times_test.len(),
            rows: cqar_rows_out,
        },
    )?;
    ctx.write_text("regret.csv", &regret_text.unwrap())?;

    // soft comparison against the published results; mismatches are
    // reported, never fatal (tie-breaking randomness and export drift)
    let checks = vec![
        check("event_count", 1602, parsed.events.len()),
        check("chosen_lag_sizes", 6, chosen["sizes"]),
        check("chosen_lag_times", 5, chosen["times"]),
        check(
            "sizes_uc_decisions_all_FR",
            "FR FR FR",
            table3
                .rows
                .iter()
                .map(|r| r.uc_d.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        ),
        check(
            "times_cc_decision_alpha_0.92",
            "R",
            table4.rows[1].cc_d.as_str(),
        ),
    ];
    #[derive(Serialize)]
    struct Diff {
        all_match: bool,
        checks: Vec<DiffCheck>,
    }
    let diff = Diff {
        all_match: checks.iter().all(|c| c.matches),
        checks,
    };
    ctx.write_json("paper_diff.json", &diff)?;
    ctx.finish()?;
    println!(
        "published-result comparison: {} ({} of {} checks match)",
        if diff.all_match { "match" } else { "differences found" },
        diff.checks.iter().filter(|c| c.matches).count(),
        diff.checks.len()
    );
    Ok(())
}
