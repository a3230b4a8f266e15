use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    /// Bad or inconsistent value; `key` is the config key path.
    #[error("{key}: {msg}")]
    Key { key: String, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] poolattn::Error),
}

impl HarnessError {
    pub(crate) fn key(key: &str, msg: impl Into<String>) -> Self {
        Self::Key { key: key.to_string(), msg: msg.into() }
    }

    /// Process exit status for this error: 2 for anything the caller can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) if !e.is_usage() => 1,
            HarnessError::Csv(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
