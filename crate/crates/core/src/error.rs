use thiserror::Error;

/// Errors raised anywhere in the forecasting and narration stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("backend error after {retries} retries: {message}")]
    Backend { message: String, retries: u32 },
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("cache corruption: {0}")]
    Corruption(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
