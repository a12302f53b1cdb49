//! Command-level error type mapping every failure onto one of the three
//! documented exit codes: 2 configuration, 3 numeric, 4 I/O.

use std::fmt;

use mfrl_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or inconsistent configuration, including bad CLI usage.
    Config(String),
    /// Numeric failure inside the pipeline (divergence, non-finite values).
    Numeric(String),
    /// Filesystem trouble or malformed binary inputs.
    Io(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            // argument-shaped core errors mean the configuration asked for
            // something impossible; the rest are numeric breakdowns
            CoreError::InvalidArgument(_)
            | CoreError::DimensionMismatch(_)
            | CoreError::Data(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Attaches the path to bare filesystem errors, which otherwise omit it.
pub fn io_at(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
