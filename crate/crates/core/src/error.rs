use thiserror::Error;

/// Errors produced by simulation, estimation and the asymptotic routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series too short: n = {n} requires at least 2n+3 = {required} observations, got {got}")]
    SeriesTooShort { n: usize, required: usize, got: usize },

    #[error("Cholesky factorization failed for grid of size {size}")]
    Cholesky { size: usize },

    #[error("covariance factorization failed: smallest eigenvalue {min_eigenvalue:e}")]
    Factorization { min_eigenvalue: f64 },

    #[error("non-finite value in simulated path at index {index}")]
    NonFinitePath { index: usize },

    #[error("quadrature tolerance {tol:e} not reached; achieved error estimate {achieved:e}")]
    Quadrature { tol: f64, achieved: f64 },

    #[error("non-finite entry in Jacobian at {0}")]
    NonFiniteJacobian(String),

    #[error("series divergent under the H < 3/4 hypothesis (H = {0})")]
    DivergentSeries(f64),

    #[error("near-singular Jacobian (normalized det = {0:e}); estimator not identifiable here")]
    SingularJacobian(f64),

    #[error("estimator did not converge; best residual {residual:e}")]
    NotConverged { residual: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::SeriesTooShort { .. } | Error::DivergentSeries(_) | Error::Parse(_) => {
                2
            }
            Error::Cholesky { .. }
            | Error::Factorization { .. }
            | Error::NonFinitePath { .. }
            | Error::Quadrature { .. }
            | Error::NonFiniteJacobian(_)
            | Error::SingularJacobian(_)
            | Error::NotConverged { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }
}
