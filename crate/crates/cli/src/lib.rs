//! Command-line front end for `rul-core`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime failure.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod sweep;

use rul_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Runtime(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Config(_) | Error::Capability(_)) => 1,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(Error::Checkpoint(_)) => 2,
            CliError::Core(_) | CliError::Runtime(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Config("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Capability("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Integrity("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::Lookup("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::Core(Error::Parse {
                line: 3,
                message: "x".into()
            })
            .exit_code(),
            2
        );
        assert_eq!(CliError::Core(Error::Checkpoint("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::NumericInput("loss")).exit_code(), 3);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 3);
    }
}
