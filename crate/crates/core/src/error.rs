use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OsrError>;

#[derive(Debug, Error)]
pub enum OsrError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported format version {0} (expected 1)")]
    UnsupportedVersion(u64),

    #[error("size mismatch in {what}: expected {expected} values, found {found}")]
    SizeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },

    #[error("label out of range: sample {sample} has label {label} but K = {classes}")]
    LabelOutOfRange {
        sample: usize,
        label: i32,
        classes: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("calibration model required for COSTARR scoring")]
    MissingCalibration,

    #[error("empty scored set")]
    EmptyScoredSet,

    #[error("scored set has no {0} samples")]
    MissingPopulation(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl OsrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OsrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 validation/usage, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            OsrError::InvalidSpec(_)
            | OsrError::InvalidArgument(_)
            | OsrError::InvalidSplit(_)
            | OsrError::MissingCalibration => 2,
            _ => 3,
        }
    }
}
