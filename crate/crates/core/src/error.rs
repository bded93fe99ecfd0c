use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sigma sigma^T is singular or outside its eigenvalue bounds: {0}")]
    SingularSigma(String),

    #[error("risk aversion must be strictly positive, got {0}")]
    NonpositiveGamma(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("complex Riccati roots: alpha^2 - 2 a |delta|^2 = {discriminant} < 0")]
    ComplexRho { discriminant: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("regression rank deficient at step {step}: {detail}")]
    RegressionRankDeficient { step: usize, detail: String },

    #[error("Picard iteration diverged at iteration {iteration} (change {change:e})")]
    PicardDiverged { iteration: usize, change: f64 },

    #[error("importance weights degenerate: ESS {ess:.1} below required {required:.1}")]
    WeightDegenerate { ess: f64, required: f64 },

    #[error("mean-field iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        best: Box<crate::mean_field::MeanFieldSolution>,
    },

    #[error("insufficient span for rate fit: {0}")]
    InsufficientSpan(String),

    #[error("could not draw a well-conditioned transformation after {attempts} attempts")]
    IllConditionedQ { attempts: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing stage output: {0}")]
    MissingStageOutput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
