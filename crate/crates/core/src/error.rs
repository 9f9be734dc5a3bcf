use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index out of range: t={t}, lag={lag}, len={len}")]
    IndexOutOfRange { t: usize, lag: usize, len: usize },

    #[error("invalid quantile level: alpha must be in (0,1), got {0}")]
    InvalidQuantile(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series too short: need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("zero-variance series: correlogram undefined")]
    ZeroVariance,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("protocol order violated: {0}")]
    ProtocolOrder(&'static str),

    #[error("no proposals recorded yet")]
    NoProposals,

    #[error("input file not found: {0}")]
    MissingFile(std::path::PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("no rows left after filtering: {0}")]
    NoRows(String),
}

pub type Result<T> = std::result::Result<T, Error>;
