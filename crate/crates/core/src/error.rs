use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension {0} is not a power of two >= 2")]
    BadDim(usize),
    #[error("system size {qubits} qubits exceeds the configured maximum {max}")]
    TooLarge { qubits: usize, max: usize },
    #[error("matrix is not Hermitian (max |H - H^dag| = {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary (max |U U^dag - I| = {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear system is singular or ill-conditioned (cond >= {0:.3e})")]
    IllConditioned(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    EigenNoConverge(usize),
    #[error("fit did not converge after {iterations} iterations (residual {residual:.3e}); best: {best}")]
    FitDidNotConverge {
        iterations: usize,
        residual: f64,
        best: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
