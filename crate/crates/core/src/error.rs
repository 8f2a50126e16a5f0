use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A field could not be parsed as a number. `row` is 1-based and excludes the header.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A parsed value violates a data contract (e.g. treatment outside {0,1}).
    #[error("validation error at row {row}: {message}")]
    InvalidRecord { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A treated proportion that no partition of the population can realize.
    #[error("proportion {requested} is not attainable; nearest attainable proportions are {below} and {above}")]
    Unattainable {
        requested: f64,
        below: f64,
        above: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
