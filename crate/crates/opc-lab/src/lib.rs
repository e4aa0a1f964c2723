//! Experiment harness: flat-file configs in, deterministic CSV tables out.
//!
//! Every study is a pure function of its parsed configuration and a seed.
//! Tables are built fully in memory and written in one shot, so a failing
//! run never leaves a partial output file, and identical config plus seed
//! reproduces the output byte for byte.

use std::fmt;

pub mod config;
pub mod studies;
pub mod table;

/// Harness failure, split by exit code: configuration problems exit with 2,
/// runtime problems with 1.
#[derive(Debug)]
pub enum CliError {
    /// The config file is missing, malformed, or fails validation.
    Config { field: String, message: String },
    /// A study failed while computing.
    Runtime { message: String },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    /// One machine-readable line: `error kind=<kind> [field=<field>] message="..."`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, message } => {
                write!(f, "error kind=config field={field} message=\"{message}\"")
            }
            CliError::Runtime { message } => {
                write!(f, "error kind=runtime message=\"{message}\"")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<opc_lab_core::error::LabError> for CliError {
    fn from(err: opc_lab_core::error::LabError) -> Self {
        CliError::Runtime {
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime {
            message: err.to_string(),
        }
    }
}
