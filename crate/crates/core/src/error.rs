use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    /// The transformation is not strictly increasing at the given sample.
    #[error("infeasible point{}", match .index { Some(i) => format!(" at sample {i}"), None => String::new() })]
    InfeasiblePoint { index: Option<usize> },

    #[error("solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("no feasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("residual variance is zero")]
    ZeroVariance,

    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be finite, got {v}")))
    }
}
