use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: unknown label {label:?}")]
    Label {
        path: PathBuf,
        line: usize,
        label: String,
    },
    #[error("vocabulary fingerprint mismatch: checkpoint has {expected}, vocabulary has {found}")]
    Fingerprint { expected: String, found: String },
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Innermost error, looking through [`Error::Cell`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cell { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
