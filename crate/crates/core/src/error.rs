use thiserror::Error;

/// Errors raised by every module of the crate.
///
/// The `Display` text is what the command-line front end prints verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("divergence error: orbit left the admissible region at step {step} ({detail})")]
    Divergence { step: u64, detail: String },
    #[error("capability error: {0}")]
    Capability(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("arity error: {0}")]
    Arity(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("convergence error: no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("sampling error: {discarded} of {total} samples diverged (limit 1%)")]
    Sampling { discarded: usize, total: usize },
    #[error("degeneracy error: {0}")]
    Degenerate(String),
    #[error("inconsistent constants: {0}")]
    InconsistentConstants(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Numerical failures (as opposed to bad input) that a front end
    /// reports as computational errors.
    pub fn is_computational(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::Convergence { .. }
                | Error::Truncation(_)
                | Error::Sampling { .. }
                | Error::Degenerate(_)
                | Error::InconsistentConstants(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
