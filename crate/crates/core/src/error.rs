use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto an exit class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("variable `{name}` has fewer than two observed categories")]
    DegenerateVariable { name: String },

    #[error("category {column} has a zero observed count")]
    DegenerateCategory { column: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weights must be strictly positive (found {0})")]
    Weight(f64),

    #[error("rank {requested} outside the admissible range 0..={max}")]
    Rank { requested: usize, max: usize },

    #[error("fold error: {0}")]
    Fold(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
