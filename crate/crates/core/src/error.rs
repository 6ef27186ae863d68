use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: file has no data rows")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: capacity factor {value} outside [0, 1]")]
    OutOfRange {
        path: PathBuf,
        line: usize,
        value: f64,
    },

    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),

    #[error("generation and weather series share no hourly timestamps")]
    EmptyIntersection,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("k = {k} outside [1, {n_features}]")]
    KOutOfRange { k: usize, n_features: usize },

    #[error("feature `{0}` has zero variance")]
    DegenerateFeature(String),

    #[error("invalid bin specification: {0}")]
    InvalidBins(String),

    #[error("value {0} outside [0, 1]")]
    ValueOutOfRange(f64),

    #[error("no contiguous run of at least {window} hours")]
    NoRunLongEnough { window: usize },

    #[error("chronological split leaves the {0} side empty")]
    EmptySide(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch normalization in train mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} outside [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("numerical divergence: non-finite value in {0}")]
    NumericalDivergence(&'static str),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint header inconsistent with payload: {0}")]
    HeaderInconsistent(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
