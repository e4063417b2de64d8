use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix not symmetric within tolerance")]
    NotSymmetric,
    #[error("non-finite entry encountered")]
    NonFinite,
    #[error("iteration cap exceeded in {0}")]
    IterationCap(&'static str),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("matrix is not Schur stable (spectral radius {0})")]
    NotSchurStable(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("admissible set not determined within {0} layers")]
    NotDetermined(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
