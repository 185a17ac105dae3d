//! Error taxonomy shared across the crate.
//!
//! Variants split into two coarse classes used by the CLI for exit codes:
//! input/configuration problems (the caller handed us something malformed)
//! and numerical failures (the data was admissible but a factorization or
//! an optimizer could not produce a usable result).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed argument: wrong sign, empty collection, out-of-range index.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Operand shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two locations in a set coincide exactly.
    #[error("duplicate location: {0}")]
    DuplicateLocation(String),

    /// An operation was asked to move backwards in time.
    #[error("time order violation: {0}")]
    TimeOrder(String),

    /// The kernel family has no finite-order rational spectral density.
    #[error("no exact finite-order spectral factor for {0}; use a rational approximation")]
    UnsupportedExactFactorization(String),

    /// A dynamics matrix is not Hurwitz-stable.
    #[error("unstable dynamics: {0}")]
    Unstable(String),

    /// A factorization failed or a matrix is too ill-conditioned to use.
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    /// The rational spectral-density fit did not converge to a usable factor.
    #[error("spectral approximation failed: {0}")]
    ApproximationFailed(String),

    /// Configuration file problems: unknown keys, bad schema, missing fields.
    #[error("config error: {0}")]
    Config(String),

    /// Structured text input (CSV, JSON lines) failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure is the caller's input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Unstable(_) | Error::Conditioning(_) | Error::ApproximationFailed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
