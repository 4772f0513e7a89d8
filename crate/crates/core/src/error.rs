use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("{field} out of range: {reason}")]
    OutOfRange { field: String, reason: String },

    #[error("uncovered UE {0}: no AP within the serving radius")]
    UncoveredUe(usize),

    #[error("compensation undefined: smallest singular value {0:e} below 1e-10")]
    CompensationUndefined(f64),

    #[error("fixed point did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("fixed point not contractive: I - J is singular")]
    NotContractive,

    #[error("need at least 10 Monte Carlo blocks, got {0}")]
    TooFewBlocks(usize),

    #[error("empty sample set")]
    EmptySamples,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn range(field: &str, reason: impl Into<String>) -> Self {
        Error::OutOfRange {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input documents rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parse(_) | Error::OutOfRange { .. } | Error::UncoveredUe(_) | Error::Dimension(_)
        )
    }
}
