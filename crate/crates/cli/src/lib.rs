//! Command implementations behind the `qrelay` binary.
//!
//! Every command returns a JSON summary and, for scans, CSV tables. Output is
//! a pure function of the resolved configuration, so equal seeds give
//! byte-identical files.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use qrelay_core::SimError;

pub use commands::{execute, Command, Options, Report};
pub use config::{load_config, parse_config, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numeric(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration and usage problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Numeric(SimError::InvalidParameter { .. }) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}
