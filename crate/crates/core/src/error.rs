use thiserror::Error;

/// Errors raised while evaluating or differentiating a program.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    /// An elementary operation was applied outside its domain, or its
    /// derivative does not exist at the given argument.
    #[error("{op} domain violation at {arg}")]
    Domain { op: &'static str, arg: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A variable recorded on one tape was used as an input on another.
    #[error("variable from tape {found} used on tape {expected}")]
    CrossTape { expected: u64, found: u64 },

    #[error("perturbation confusion: {0}")]
    PerturbationConfusion(String),

    #[error("singular Hessian (reciprocal condition estimate {rcond:e})")]
    Singular { rcond: f64 },

    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { what: &'static str, iter: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = AdError> = std::result::Result<T, E>;

pub(crate) fn domain(op: &'static str, arg: f64) -> AdError {
    AdError::Domain { op, arg }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AdError::Dimension { expected, got })
    }
}
