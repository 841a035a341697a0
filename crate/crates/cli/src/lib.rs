//! Commands behind the `npode` binary.

pub mod commands;
pub mod config;
pub mod plot;

use thiserror::Error;

pub use config::{ModelKind, RunConfig, Source};

/// Command failures grouped by the exit status they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<npode::Error> for CliError {
    fn from(e: npode::Error) -> Self {
        use npode::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Unsupported(_) => CliError::Config(msg),
            E::Diverged { .. } | E::IllConditioned { .. } => CliError::Training(msg),
            E::Io(_) => CliError::Io(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
