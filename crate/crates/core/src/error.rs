use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("matrix of order {0} exceeds the small-eigensolver limit of 8")]
    TooLarge(usize),
    #[error("QR iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("root iteration stagnated (residual {0:e})")]
    Stagnation(f64),
    #[error("singular system in {0}")]
    Singular(&'static str),
    #[error("no Hopf onset: {0}")]
    NoHopf(String),
    #[error("bracket [{lo}, {hi}] does not contain a sign change")]
    NoBracket { lo: f64, hi: f64 },
    #[error("truncation too small: {0}")]
    Truncation(String),
    #[error("forcing has a critical-pair component {0:e}; the equation is not solvable")]
    Unsolvable(f64),
    #[error("probe point rejected: {0}")]
    Rejected(String),
}

pub type Result<T> = std::result::Result<T, Error>;
