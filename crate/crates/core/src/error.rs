use thiserror::Error;

/// Errors raised by the toolkit. Inequality violations are findings, not errors,
/// and are reported through verdicts instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("delay {delta} is not an integer multiple of dt = {dt}")]
    NonCommensurateDelay { delta: f64, dt: f64 },

    #[error("invalid horizon: T = {t_end} must exceed t0 = {t0}")]
    InvalidHorizon { t0: f64, t_end: f64 },

    #[error("{what}: evaluation point s = {s} lies after t = {t}")]
    OutOfDomain { what: &'static str, t: f64, s: f64 },

    #[error("non-finite value in {context} (path {path}, step {step})")]
    NonFinite {
        context: &'static str,
        path: usize,
        step: usize,
    },

    #[error("no convergence after {iterations} iterations (last gap {last_gap:e})")]
    NoConvergence { iterations: usize, last_gap: f64 },

    #[error("ill-conditioned regression at step {step}: condition number {condition:e}")]
    IllConditionedRegression { step: usize, condition: f64 },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("zero denominator at t = {t}")]
    ZeroDenominator { t: f64 },

    #[error("config error in `{field}`: {message}")]
    ConfigError { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e))
    }
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
