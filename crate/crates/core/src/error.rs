use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit codes: `Config` -> 2, `Data`/`Io` -> 3,
/// `Numeric` -> 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, malformed configuration, unknown identifiers.
    #[error("config error: {0}")]
    Config(String),

    /// Input data violates a contract (dimensions, byte counts, labels, NaN).
    #[error("data error: {0}")]
    Data(String),

    /// A numeric procedure failed (rank deficiency, instability, divergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
