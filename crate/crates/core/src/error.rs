use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("expected curvature matrix has no nonzero eigenvalue")]
    ZeroExpectedCurvature,

    #[error("batch size must be positive")]
    InvalidBatchSize,

    #[error("gamma = {gamma} violates 4*gamma^2 in (0, {limit}]")]
    InvalidGamma { gamma: f64, limit: f64 },

    #[error("inhomogeneous thresholds need s_q > 0, got {0}")]
    DegenerateInhomogeneous(f64),

    #[error("non-finite gradient at iteration {iteration}, coordinate {coordinate}")]
    NonFiniteGradient { iteration: usize, coordinate: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("enumeration budget exceeded: {outcomes} batch outcomes > {budget}")]
    EnumerationBudget { outcomes: f64, budget: u64 },

    #[error("cannot fit a rate: {0}")]
    RateFit(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
