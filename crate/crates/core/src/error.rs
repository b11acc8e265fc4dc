use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    /// A data file row could not be ingested. `row` is the 1-based record
    /// number, not counting the header line.
    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("oracle construction failed: {0}")]
    Oracle(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("infeasible selection constraints: {0}")]
    Infeasible(String),

    #[error("unsupported estimator: {0}")]
    UnsupportedEstimator(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("intervention rejected: {0}")]
    Intervention(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error is caused by the caller's input rather than by a
    /// failure inside the library.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Training(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
