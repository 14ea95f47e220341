use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate value range: all training values equal {value}")]
    DegenerateRange { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid knots: {0}")]
    Knots(String),

    #[error("query {x} lies outside the knot span [{lo}, {hi}]")]
    OutOfSpan { x: f64, lo: f64, hi: f64 },

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("training diverged at iteration {iteration}: total loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("model has no gating network (variant {0})")]
    NoGate(String),

    #[error("k = {k} exceeds record count {n}")]
    TooFew { k: usize, n: usize },

    #[error("unknown dataset '{name}' (looked in {searched})")]
    UnknownDataset { name: String, searched: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
