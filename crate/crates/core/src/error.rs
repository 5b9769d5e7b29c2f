use thiserror::Error;

use crate::data::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("input is empty")]
    EmptyInput,

    #[error("schema error: column `{column}` not found")]
    MissingColumn { column: String },

    /// `row` is the zero-based data row (header excluded).
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset failed validation: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("weighted design matrix is rank deficient (column `{column}`)")]
    Singular { column: String },

    #[error("perfect separation detected: coefficient for `{covariate}` exceeds the cap")]
    Separation { covariate: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("not enough controls to match without replacement: {needed} more needed")]
    PoolExhausted { needed: usize },

    #[error("bootstrap replicate {index} failed twice: {source}")]
    ReplicateFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation run {run} failed: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
