use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("eigendecomposition did not converge (d = {dim}, ||A||_F = {norm:e})")]
    NoConvergence { dim: usize, norm: f64 },

    #[error("singular matrix at iteration {iteration}: {reason}")]
    Singular { iteration: usize, reason: String },

    #[error(
        "singular Lyapunov pencil: smallest eigenvalue {sigma_min:e} is below tolerance {tolerance:e}; \
         add a positive epsilon to the pooled matrix diagonal"
    )]
    SingularPencil { sigma_min: f64, tolerance: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite objective when perturbing entry ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
