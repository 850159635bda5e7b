//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user input: dimensions, ranges, selector shapes, option values.
    #[error("invalid input: {0}")]
    Input(String),

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint bytes are malformed or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// PGM bytes are malformed.
    #[error("pgm error: {0}")]
    Pgm(String),

    /// A stiffness system lost positive definiteness.
    #[error("singular system: {0}")]
    Singular(String),

    /// A solve finished but the residual contract could not be met,
    /// or a non-finite value surfaced mid-computation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A render would exceed the configured pixel budget.
    #[error("render of {requested} pixels exceeds budget of {budget}")]
    PixelBudget { requested: u64, budget: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command line: 2 for config/usage errors,
    /// 3 for numerical failures and resource limits.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Checkpoint(_) | Error::Pgm(_) => 2,
            Error::Singular(_)
            | Error::Numerical(_)
            | Error::PixelBudget { .. }
            | Error::Io(_) => 3,
        }
    }
}
