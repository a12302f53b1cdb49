use alloc::string::String;
use core::fmt;

/// Errors shared by every numeric stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Shapes disagree; the message names the offending layer or buffer.
    DimensionMismatch(String),
    /// A NaN or infinity showed up where a finite value is required.
    NonFinite(String),
    /// Invalid argument or configuration value.
    InvalidArgument(String),
    /// A matrix factorization failed even after jitter retries.
    Linalg(String),
    /// An iterative fit hit its iteration cap without converging.
    NoConvergence(String),
    /// Evidence optimization hit its iteration cap; carries the last
    /// iterate so callers can inspect how far it got.
    EvidenceNoConvergence {
        iterations: usize,
        last: alloc::boxed::Box<crate::bayes::BayesLinearPosterior>,
    },
    /// Training loss became NaN; carries the epoch index.
    Diverged { epoch: usize },
    /// MCMC acceptance rate left the usable window after warmup.
    McmcAcceptance { rate: f64 },
    /// A dataset or split cannot support the requested operation.
    Data(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            CoreError::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            CoreError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::Linalg(msg) => write!(f, "linear algebra failure: {msg}"),
            CoreError::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
            CoreError::EvidenceNoConvergence { iterations, .. } => write!(
                f,
                "evidence optimization did not converge within {iterations} iterations"
            ),
            CoreError::Diverged { epoch } => {
                write!(f, "training diverged (loss is NaN) at epoch {epoch}")
            }
            CoreError::McmcAcceptance { rate } => write!(
                f,
                "MCMC acceptance rate {rate:.3} outside [0.05, 0.7] after warmup; \
                 rescale the proposal or adjust the target rate"
            ),
            CoreError::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
