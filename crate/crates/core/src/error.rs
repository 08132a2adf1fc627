use thiserror::Error;

/// Errors raised by the simulation, thermal and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or unsupported configuration (bad sector, bad sizes, unknown names).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with arguments that do not belong together.
    #[error("usage error: {0}")]
    Usage(String),

    /// A resource guard (dense size, lookup table size, horizon) was exceeded.
    #[error("resource guard exceeded: {0}")]
    Resource(String),

    /// A numerical procedure failed to reach its accuracy target.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A fit could not be carried out or was rejected.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("cache format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
