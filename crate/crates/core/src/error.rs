use thiserror::Error;

/// Errors raised while reading or validating cohort data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("duplicate subject id {id:?} (rows {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },

    #[error("csv header must start with id,inf_time,end_time,end_status (found {found:?})")]
    Header { found: String },

    #[error("censored subjects present ({}): pass allow_drop to exclude them", .ids.join(", "))]
    CensoredSubjects { ids: Vec<String> },

    #[error("horizon {tau} is smaller than the largest end time {max_end}")]
    Horizon { tau: f64, max_end: f64 },

    #[error("covariate {name:?} is not present in the cohort")]
    UnknownCovariate { name: String },

    #[error("covariate {name:?} is numeric; stratification needs a categorical covariate")]
    NotCategorical { name: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised by the estimators and model fits.
#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("no records to estimate from")]
    Empty,

    #[error("no {0} events")]
    NoEvents(String),

    #[error("inverse-probability weight is unbounded: {0}")]
    Positivity(String),

    #[error("model is separated on {term:?}: |coefficient| exceeded {limit}")]
    Separation { term: String, limit: f64 },

    #[error("no convergence after {iterations} iterations (max |score| per iteration: {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("information matrix is singular")]
    Singular,

    #[error("daily exposure probability {p} on day {day} leaves no mass on the unexposed path")]
    DegenerateProbability { day: u32, p: f64 },

    #[error("invalid hazard specification: {0}")]
    HazardSpec(String),

    #[error("quadrature did not converge after {0} refinements")]
    Quadrature(usize),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = EstimationError> = std::result::Result<T, E>;
