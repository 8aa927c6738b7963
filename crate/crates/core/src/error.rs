use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Hurst parameter {0} outside the supported range [0.5, 1)")]
    HurstOutOfRange(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("Cholesky factorization failed for n = {n} even with a {jitter:e} diagonal jitter; try the circulant sampler")]
    Cholesky { n: usize, jitter: f64 },

    #[error("quadrature did not converge: estimate {estimate:e}, error estimate {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("root finding failed near target {target:e}")]
    RootFinding { target: f64 },

    #[error("ellipticity violated: |sigma({x})| = {sigma:e} < sigma0 = {sigma0:e}")]
    Ellipticity { x: f64, sigma: f64, sigma0: f64 },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model must have unit diffusion (apply the Lamperti transform first)")]
    NotUnitDiffusion,
}

pub type Result<T> = std::result::Result<T, Error>;
