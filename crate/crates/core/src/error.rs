use thiserror::Error;

use crate::equilibrium::EquilibriumResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid set specification: {0}")]
    InvalidSet(String),

    #[error("invalid mesh request: {0}")]
    InvalidMesh(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// The cell self-interaction integral diverges for this exponent.
    #[error("Riesz exponent p = {p} is not integrable on cells of dimension {cell_dim}")]
    NonIntegrableKernel { p: f64, cell_dim: usize },

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<EquilibriumResult>,
    },

    #[error("singular linear system on a support of size {0}")]
    SingularSystem(usize),

    #[error("moment diverges: {0}")]
    DivergentMoment(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
