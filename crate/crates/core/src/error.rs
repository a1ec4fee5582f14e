use std::path::PathBuf;

/// Errors raised by the simulators, operators, samplers and file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("blood volume reached a non-positive value ({value}) at t = {time} s")]
    NonPositiveVolume { time: f64, value: f64 },

    #[error("division by zero: volume sample {index} is zero")]
    DivisionByZero { index: usize },

    #[error("operator is numerically singular (condition number {0:e})")]
    SingularOperator(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid paradigm: {0}")]
    InvalidParadigm(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("precision matrix is not positive definite")]
    SingularPrecision,

    #[error("chain diverged: noise variance reached {0:e}")]
    ChainDiverged(f64),

    #[error("reference vector has zero norm")]
    ZeroTruth,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
