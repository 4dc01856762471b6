use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} outside window [{min}, {max}]")]
    IndexOutOfWindow { index: i64, min: i64, max: i64 },

    #[error("forward cocycle requested with m = {m} < n = {n}; use the kernel inverse for backward values")]
    BackwardTransition { m: i64, n: i64 },

    #[error("restriction of A({m},{n}) to ker P_{n} is numerically singular (min singular value {min_sv:e})")]
    SingularKernelRestriction { m: i64, n: i64, min_sv: f64 },

    #[error("rank of ker P_{n} ({rank_n}) differs from rank of ker P_{m} ({rank_m})")]
    KernelRankMismatch { m: i64, n: i64, rank_m: usize, rank_n: usize },

    #[error("pair ({m},{n}) is outside the index set of the {family} bound family")]
    IndexOutsideFamily { m: i64, n: i64, family: &'static str },

    #[error("bound at ({m},{n}) is not strictly positive and finite: {value}")]
    NonPositiveBound { m: i64, n: i64, value: f64 },

    #[error("sequence index {index} outside tabulated range [{start}, {end}]")]
    SequenceIndex { index: i64, start: i64, end: i64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series diverges: {0}")]
    DivergedSeries(String),

    #[error("envelope '{envelope}' cannot be paired with the '{family}' bound family")]
    EnvelopeMismatch { envelope: &'static str, family: &'static str },

    #[error("the '{0}' bound family has no product-form representation")]
    NotProductForm(&'static str),

    #[error("operation requires {expected} mode")]
    ModeMismatch { expected: &'static str },

    #[error("max{{λ,μ}} < 1 fails: max{{λ,μ}} = {max}")]
    NonContraction { max: f64 },

    #[error("fixed-point iteration did not converge in {iterations} steps (residual {residual:e})")]
    IterationCapExceeded { iterations: usize, residual: f64 },

    #[error("linear system for the fixed point is singular at anchor {anchor}")]
    SingularFixedPointSystem { anchor: i64 },

    #[error("construction inconsistent: {identity} residual {residual:e} exceeds {tolerance:e} at {location}")]
    ConstructionInconsistent {
        identity: String,
        residual: f64,
        tolerance: f64,
        location: String,
    },

    #[error("direct and extended half-line computations disagree: {0}")]
    CertificateMismatch(String),

    #[error("input document: {0}")]
    Document(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
