use std::path::PathBuf;

use thiserror::Error;

use crate::lp::Status;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}: no data rows")]
    EmptyInput(PathBuf),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("price {price} EUR/MWh outside bid grid [{lo}, {hi}]")]
    OutOfGrid { price: f64, lo: f64, hi: f64 },
    #[error("model build: {0}")]
    ModelBuild(String),
    #[error("{context}: solver returned {status}")]
    NotOptimal { context: String, status: Status },
    #[error("instance too large: {0}")]
    BudgetExceeded(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn not_optimal(context: impl Into<String>, status: Status) -> Self {
        Error::NotOptimal {
            context: context.into(),
            status,
        }
    }
}
