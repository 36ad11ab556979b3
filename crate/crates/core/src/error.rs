use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite input to {0}")]
    NumericInput(&'static str),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("clustering error: {0}")]
    Clustering(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Integrity(_) | Error::Clustering(_) | Error::Lookup(_)
        )
    }
}
