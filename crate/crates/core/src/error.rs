use thiserror::Error;

/// Errors raised by the solvers and constructors of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible process parameters: {0}")]
    InfeasibleProcess(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("{what} did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        what: String,
        residual: f64,
        iterations: usize,
    },

    #[error("coupled iteration failed; residual history {history:?}")]
    Coupling { history: Vec<f64> },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("step size underflow in {0}")]
    StepUnderflow(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
