use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Each variant corresponds to one failure class that callers (in
/// particular the CLI) map onto a distinct exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix A_{index} is not invertible (|det| = {det:e})")]
    Singular { index: i64, det: f64 },

    #[error("propagator span |m - n| = {span} exceeds the direct-product limit {limit}; use the QR-accumulated path")]
    SpanTooLong { span: u64, limit: u64 },

    #[error("orbit diverged after index {last_finite}")]
    Divergence { last_finite: i64 },

    #[error("backward step at index {index} failed to converge after {iterations} iterations (residual {residual:e})")]
    BackwardSolve {
        index: i64,
        iterations: usize,
        residual: f64,
    },

    #[error("fixed-point iteration is not contracting ({context}): update ratio {ratio:.4}")]
    NonContraction { context: String, ratio: f64 },

    #[error("ambiguous splitting at index {index}: singular-value gap {gap:e} at scale {scale}")]
    AmbiguousSplitting { index: i64, gap: f64, scale: f64 },

    #[error("diagnostics: {0}")]
    Diagnostics(String),

    #[error("grid [{lo}, {hi}] does not cover the spectrum; try [{suggested_lo:.6}, {suggested_hi:.6}]")]
    Coverage {
        lo: f64,
        hi: f64,
        suggested_lo: f64,
        suggested_hi: f64,
    },

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("scale {scale} lies within resolution of a growth rate (Bohl range [{lower:.6}, {upper:.6}]); bisect instead")]
    Boundary { scale: f64, lower: f64, upper: f64 },

    #[error("index {index} outside the window [-{window}, {window}]")]
    Range { index: i64, window: i64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("point escaped: no pullback into the local domain within {steps} steps")]
    Escape { steps: usize },

    #[error("domain precondition failed: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
