use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, layouts, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two basis directions were zero or parallel.
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    /// CKA is undefined when an activation matrix has no variance.
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("ingestion error in {}: at byte {offset}: {message}", path.display())]
    Ingestion {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

/// Early-return with a contract violation unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
