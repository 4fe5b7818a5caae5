use thiserror::Error;

/// Errors raised by the numerical operations of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violated the documented precondition of an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A pairing asked for more derivatives than the test function supplies.
    #[error("order mismatch: distribution of order {needed} paired with a test function of order {available}")]
    OrderMismatch { needed: usize, available: usize },

    /// A moment Gram system was too ill-conditioned to trust.
    #[error("singular moment system (condition estimate {0:.3e})")]
    SingularMoments(f64),

    /// A dyadic series did not decay at the rate required by the kernel.
    #[error("dyadic series does not decay like 2^(-beta n): {0}")]
    DivergenceSuspected(String),

    /// A limiting procedure (pointwise derivative, reconstruction) failed to settle.
    #[error("limit did not converge: {0}")]
    NonConvergent(String),

    /// Exponents violate the hypotheses of the Schauder or multilevel constructions.
    #[error("rejected: {0}")]
    Rejected(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
