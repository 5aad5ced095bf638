use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The GP covariance matrix could not be Cholesky-factorized.
    #[error("kernel matrix is not positive definite{}", describe_duplicates(.duplicates))]
    SingularKernel {
        /// Pairs of training-sample indices with identical states.
        duplicates: Vec<(usize, usize)>,
    },

    #[error("jacobian is rank deficient (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    /// A zero violation budget makes every chance constraint demand an
    /// unbounded margin.
    #[error("violation probability is zero; chance constraints cannot be satisfied")]
    ZeroRisk,

    #[error("argument outside the function domain: {0}")]
    Domain(String),

    #[error("deflection bound exceeded at instant {instant}, limb {limb}: |delta_wall| = {norm:.4} m > {bound:.4} m")]
    DeflectionBoundExceeded {
        instant: usize,
        limb: usize,
        norm: f64,
        bound: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn describe_duplicates(d: &[(usize, usize)]) -> String {
    if d.is_empty() {
        return String::new();
    }
    let pairs: Vec<String> = d.iter().map(|(a, b)| format!("{a}={b}")).collect();
    format!(" (duplicate training states: {})", pairs.join(", "))
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
