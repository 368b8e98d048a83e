//! Failure kinds and their exit codes.

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    /// Invalid command-line usage or a value rejected by a module contract.
    #[error("invalid request: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Output(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Output(_) => "output",
        }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Config(mut e) => {
                e.message = format!("{ctx}: {}", e.message);
                CliError::Config(e)
            }
            CliError::Usage(m) => CliError::Usage(format!("{ctx}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{ctx}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{ctx}: {m}")),
            CliError::Output(m) => CliError::Output(format!("{ctx}: {m}")),
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<modeconn::Error> for CliError {
    fn from(e: modeconn::Error) -> Self {
        use modeconn::Error as E;
        match e {
            E::Contract(_) => CliError::Usage(e.to_string()),
            E::Ingestion { .. } | E::Io(_) => CliError::Data(e.to_string()),
            E::Numeric(_) | E::DegenerateBasis(_) | E::UndefinedSimilarity(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Attaches context to any error convertible into [`CliError`].
pub trait Context<T> {
    fn ctx(self, ctx: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn ctx(self, ctx: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| e.into().context(&ctx()))
    }
}
