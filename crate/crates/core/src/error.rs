use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A field lost positivity or became non-finite.
    #[error("invalid state at t = {time}: {reason}")]
    StateInvalid { time: f64, reason: String },

    #[error("solver error: {0}")]
    Solver(String),

    /// Mismatched grids, cadences or sample times between two objects.
    #[error("interface error: {0}")]
    Interface(String),

    #[error("construction error: {0}")]
    Construction(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
