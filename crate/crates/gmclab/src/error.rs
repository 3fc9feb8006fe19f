use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },
    #[error("joint covariance dimension {dim} exceeds the cap {cap}")]
    Size { dim: usize, cap: usize },
    #[error("covariance not factorable after jitter {jitter:e}; most negative eigenvalue ~ {min_eigenvalue:.3e}")]
    Factorization { jitter: f64, min_eigenvalue: f64 },
    #[error("degenerate measure: total mass {0:.3e}")]
    DegenerateMeasure(f64),
    #[error("Wick inverse needs a nonzero constant coefficient")]
    WickInverse,
    #[error("kernel |x|^-alpha is not integrable for alpha = {0}")]
    NonIntegrable(f64),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("non-degeneracy violated: Rayleigh quotient {quotient:.3e}")]
    NonDegeneracy { quotient: f64, witness: Vec<f64> },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the `sim` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Argument(_)
            | Error::Precondition(_)
            | Error::Validation(_)
            | Error::Parse(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
