use thiserror::Error;

/// Errors raised by the attention library.
///
/// Everything except [`Error::Internal`] is a usage error: the caller handed
/// in inputs that violate an operation's preconditions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed batch: {0}")]
    Batch(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
