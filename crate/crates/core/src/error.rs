use thiserror::Error;

/// Errors raised across the simulation and identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("network construction failed after {budget} attempts: {reason}")]
    Construction { budget: usize, reason: String },

    #[error("numerical divergence at t={t}, agent={agent}: {detail}")]
    Divergence { t: usize, agent: usize, detail: String },

    #[error("particle degeneracy at t={t}: {detail}")]
    Degeneracy { t: usize, detail: String },

    #[error("non-finite value: {0}")]
    Numerical(String),

    #[error("gossip protocol error: {0}")]
    Protocol(String),

    #[error("parameter estimate diverged at EM iteration {iteration} (|theta| = {norm:.3e})")]
    DivergenceGuard { iteration: usize, norm: f64 },

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
