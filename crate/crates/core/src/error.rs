use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: matrix is not symmetric (max |A - A^T| = {max_asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric {
        what: String,
        max_asymmetry: f64,
        tolerance: f64,
    },

    #[error("{what}: matrix is not positive definite (Cholesky pivot {pivot_index} = {min_pivot:e})")]
    NotPositiveDefinite {
        what: String,
        pivot_index: usize,
        min_pivot: f64,
    },

    #[error("{what}: matrix is ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { what: String, condition: f64 },

    #[error("{what}: matrix is singular")]
    Singular { what: String },

    #[error("{what}: design is rank deficient")]
    RankDeficient { what: String },

    #[error("{what}: dimension mismatch (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("incomplete grid: missing cells {}", format_pairs(.missing))]
    IncompleteGrid { missing: Vec<(String, String)> },

    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense V would have {n} rows, above the limit of {limit}; use the structured operator instead")]
    Capacity { n: usize, limit: usize },

    #[error("pooled predictor second-moment matrix is singular; null direction {null_direction:?}")]
    Collinear { null_direction: Vec<f64> },

    #[error("degenerate inference for {parameter}: standard error is zero")]
    DegenerateInference { parameter: String },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("study failed: {failures} of {total} replicate fits failed")]
    StudyFailed { failures: usize, total: usize },

    #[error("unknown verification suite '{0}'")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(a, b)| format!("({a},{b})"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
