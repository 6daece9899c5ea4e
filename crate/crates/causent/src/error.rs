//! Error type shared across the crate.
//!
//! Variants are grouped by how callers should react: configuration and parse
//! problems are user-fixable (CLI exit code 2), everything else is a runtime
//! failure (exit code 1). Divergence carries the integration step index so a
//! blown-up simulation can be located in the data.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration (unknown keys, out-of-range values, missing files named by the config).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input text (trajectory CSV, model JSON, term labels).
    #[error("parse error: {0}")]
    Parse(String),

    /// Inconsistent structural inputs (layout/library/model mismatches).
    #[error("structural error: {0}")]
    Structure(String),

    /// An operation precondition was violated by otherwise well-formed inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A state or moment became non-finite during time stepping.
    #[error("numerical divergence at step {step}: {what}")]
    Divergence { what: String, step: usize },

    /// Parameter estimation could not produce a usable solution.
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
