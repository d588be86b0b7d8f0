use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape { context: &'static str, expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("backward called with a cache that does not match the parameters")]
    StaleCache,

    #[error("row {row}, column '{column}': {message}")]
    Cell { row: usize, column: String, message: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error("decode: {0}")]
    Decode(String),

    #[error("degenerate subdomain structure: {0}")]
    Degenerate(String),

    #[error("labels contain a single class; AUC and AUPRC need both")]
    SingleClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape { context, expected: expected.to_string(), got: got.to_string() }
    }
}
