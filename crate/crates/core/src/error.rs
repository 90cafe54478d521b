use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("concept alignment error: {names} names but {rows} embedding rows")]
    Alignment { names: usize, rows: usize },

    #[error(
        "normal matrix is rank deficient (pivot {pivot} of {dim}); refit with a positive ridge lambda"
    )]
    RankDeficient { pivot: usize, dim: usize },

    #[error("degenerate {what} vector: row {row} has zero norm")]
    DegenerateVector { what: &'static str, row: usize },

    #[error("degenerate target: zero total variance but non-zero residual")]
    DegenerateTarget,

    #[error("diversity undefined: {0}")]
    UndefinedDiversity(String),

    #[error("histogram accounting error: concept {0} is not present")]
    Accounting(usize),

    #[error("at least 2 classes are required, got {0}")]
    InsufficientClasses(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("budget {budget} is invalid for a pool of {pool} inputs")]
    Budget { budget: usize, pool: usize },

    #[error("infeasible subset plan: {0}")]
    Plan(String),

    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),

    #[error("improvement undefined: maximum accuracy equals original accuracy")]
    DegenerateDenominator,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
