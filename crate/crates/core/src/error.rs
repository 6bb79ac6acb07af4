use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: rank must be 1-3 and every dimension >= 1")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("division by zero in element {index}")]
    DivisionByZero { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{layer}: backward called before forward")]
    BackwardWithoutForward { layer: String },

    #[error("model build failed at {stage}: {detail}")]
    Build { stage: String, detail: String },

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount { row: usize, expected: usize, found: usize },

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    ParseNumber { row: usize, column: String, value: String },

    #[error("categorical column '{0}' has no values")]
    EmptyCategorical(String),

    #[error("label value '{0}' is not in the class map")]
    UnknownLabel(String),

    #[error("class '{class}' has {count} samples, fewer than k = {k}")]
    ClassTooSmall { class: String, count: usize, k: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("feature width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("bad file format: {0}")]
    Format(String),
}
