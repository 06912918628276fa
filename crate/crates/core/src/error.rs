use std::path::PathBuf;

use thiserror::Error;

/// Broad classes of failure, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` named in schema is missing from the file")]
    MissingColumn(String),
    #[error("no usable rows after applying the missing-data policy")]
    NoUsableRows,
    #[error("non-finite or non-numeric value in column `{column}` at data row {row}")]
    NonFinite { column: String, row: usize },
    #[error("exposure column {0} has zero variance")]
    DegenerateColumn(usize),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("confounder cross-product is rank deficient ({0})")]
    RankDeficient(String),
    #[error("subset size {subset_size} is below the minimum of {min} (n = {n}, K = {k})")]
    SubsetTooSmall {
        n: usize,
        k: usize,
        subset_size: usize,
        min: usize,
    },
    #[error("transport problem {rows}x{cols} exceeds the exact solver limit")]
    TooLarge { rows: usize, cols: usize },
    #[error("subset outputs are not combinable: {0}")]
    ConfigMismatch(String),
    #[error("operation requires the ARD kernel")]
    ModeError,
    #[error("regressor has zero variance")]
    DegenerateRegressor,
    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical(_) | Error::RankDeficient(_) | Error::TooLarge { .. } => {
                ErrorClass::Numerical
            }
            Error::AtIteration { source, .. } => source.class(),
            Error::Domain(_) | Error::Config(_) | Error::SubsetTooSmall { .. } => {
                ErrorClass::Usage
            }
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
