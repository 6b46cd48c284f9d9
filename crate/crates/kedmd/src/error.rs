use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Wendland kernel with dimension n={n}, smoothness k={k} is not supported (shipped formula: k=1, n<=3)")]
    UnsupportedKernel { n: usize, k: usize },

    #[error("radial argument must be nonnegative, got {0}")]
    NegativeRadius(f64),

    #[error("invalid {what}: {why}")]
    InvalidArgument { what: &'static str, why: String },

    #[error("points {i} and {j} coincide (distance {dist:.3e} below tolerance {tol:.1e}); the kernel matrix would be singular")]
    DuplicatePoints {
        i: usize,
        j: usize,
        dist: f64,
        tol: f64,
    },

    #[error("factorization failed at leading minor {minor} (pivot {pivot:.6e}); matrix is not numerically positive definite, consider increasing lambda")]
    NotPositiveDefinite { minor: usize, pivot: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("inverse power iteration did not converge within {iterations} iterations (last estimate {estimate:.6e})")]
    PowerIterationStalled { iterations: usize, estimate: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("control samples of cluster {cluster} are rank deficient (numerical rank {rank}, need {required})")]
    RankDeficient {
        cluster: usize,
        rank: usize,
        required: usize,
    },

    #[error("dataset violates the data requirements:\n{0}")]
    InvalidDataset(String),

    #[error(
        "could not draw controls of full rank for cluster {cluster} after {attempts} attempts"
    )]
    DegenerateControls { cluster: usize, attempts: usize },

    #[error("tightened state box is empty at horizon step {step} (axis {axis})")]
    EmptyTightenedBox { step: usize, axis: usize },

    #[error("optimal control problem infeasible: {why}")]
    Infeasible { why: String },

    #[error("objective became non-finite during optimization")]
    NonFiniteCost,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {why}")]
    MalformedFile { path: String, why: String },
}

pub type Result<T> = std::result::Result<T, Error>;
