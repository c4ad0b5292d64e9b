use thiserror::Error;

/// Error taxonomy shared across the crate.
///
/// `Shape` covers structural problems (mismatched lengths and dimensions),
/// `Domain` covers values outside an operation's contract, `UnsupportedMode`
/// covers operations called on the wrong scan mode, and `Config` covers
/// rejected run configurations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
