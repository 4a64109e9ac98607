use thiserror::Error;

/// Errors produced by model construction, validation, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (bad file, bad field, bad point reference).
    /// The message names the offending field or value.
    #[error("input error: {0}")]
    Input(String),

    /// A request that is syntactically fine but outside the defined domain,
    /// e.g. a meet query in a region that is not uniquely path connected.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
