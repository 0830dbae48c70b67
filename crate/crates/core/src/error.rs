use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid probability: {0}")]
    InvalidProbability(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv parse error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Csv { row: Option<u64>, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missingness calibration failed: {0}")]
    Calibration(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("non-finite value in {stage} at step {step}")]
    NonFinite { stage: String, step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::Csv {
                row,
                message: format!("expected {expected_len} fields, found {len}"),
            },
            other => Error::Csv {
                row,
                message: format!("{other:?}"),
            },
        }
    }
}
