use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("maze load error at row {row}, col {col}: {msg}")]
    MazeLoad { row: usize, col: usize, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("query error: {0}")]
    Query(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
