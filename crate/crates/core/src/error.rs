use thiserror::Error;

/// Errors raised by the model, solvers, filters and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical procedure produced non-finite or inadmissible values.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An object is not in the state required by the operation.
    #[error("state error: {0}")]
    State(String),
    /// Invalid parameters, strategy combination or experiment file.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}
