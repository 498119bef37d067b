use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky failed even at the largest rung of the jitter ladder.
    #[error("matrix is numerically singular (last jitter tried: {jitter:e})")]
    SingularMatrix { jitter: f64 },

    #[error("chain diverged at step {step}: non-finite gradient in {group}")]
    Diverged {
        group: String,
        step: usize,
        /// Index of the last retained sample before divergence, if any.
        last_finite_sample: Option<usize>,
    },

    #[error("diagnostic undefined: {0}")]
    DiagnosticUndefined(String),

    #[error("training diverged at iteration {iteration}: non-finite objective")]
    TrainingDiverged { iteration: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
