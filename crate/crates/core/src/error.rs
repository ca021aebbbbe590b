use thiserror::Error;

/// Errors raised by the estimation, forecasting and impulse-response routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in series `{series}` at index {index}: {message}")]
    Domain {
        series: String,
        index: usize,
        message: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate restriction at horizon {horizon}: {message}")]
    DegenerateRestriction { horizon: usize, message: String },

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Domain { .. }
            | Error::Alignment(_)
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Dimension(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => true,
            Error::Numerical(_) | Error::DegenerateRestriction { .. } => false,
            Error::Sweep { source, .. } => source.is_input_error(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
