//! Host-side error type: wraps core failures and I/O problems and assigns
//! every failure to one of the documented process exit classes.

use boltzgen_core::CoreError;
use std::fmt;

pub type Result<T> = std::result::Result<T, CliError>;

/// Exit classes: 1 usage/configuration, 2 data, 3 numerical.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed config, invalid hyperparameters.
    Usage(String),
    /// Missing, malformed, or inconsistent input files.
    Data(String),
    /// Non-finite values or other numerical breakdowns during computation.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig { .. } | CoreError::InvalidSchedule { .. } => {
                CliError::Usage(msg)
            }
            CoreError::InvalidGraph { .. }
            | CoreError::InvalidRecord { .. }
            | CoreError::DuplicateId { .. }
            | CoreError::EmptyData { .. }
            | CoreError::MissingLabel { .. }
            | CoreError::WrongAtomCount { .. } => CliError::Data(msg),
            // Everything else (non-finite values, eigensolver trouble, tape
            // misuse) is a numerical failure of the computation itself.
            _ => CliError::Numeric(msg),
        }
    }
}
