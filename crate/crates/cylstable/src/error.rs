use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum CylError {
    /// Invalid configuration: bad dimensions, non-monotone grids, rejected
    /// stability indices, operator-norm violations and the like.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical procedure failed to reach its declared tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CylError>;

impl CylError {
    pub fn config(msg: impl Into<String>) -> Self {
        CylError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CylError::Numerical(msg.into())
    }
}
