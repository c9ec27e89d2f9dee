use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("symmetric eigensolver did not converge on a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("Cholesky factorization failed on a {dim}x{dim} system")]
    Factorization { dim: usize },

    #[error("no valid debiasing regularizer: sketch size {m} does not exceed effective dimension {effective_dim:.3}")]
    NoValidRoot { m: usize, effective_dim: f64 },

    #[error("bisection bracket could not be established for {what}")]
    BracketFailure { what: &'static str },

    #[error("label {label} at row {row} is not a valid binary label")]
    InvalidLabel { row: usize, label: f64 },

    #[error("all {q} workers were dropped in round {round}")]
    AllWorkersDropped { round: usize, q: usize },

    #[error("line search found no finite objective value after {probes} probes")]
    LineSearchFailed { probes: usize },

    #[error("dense formation limited to d <= {max}, got {dim}")]
    TooLarge { dim: usize, max: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
