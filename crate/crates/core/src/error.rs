use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input outside the domain of a function (NaN or infinite).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// An operation produced NaN or an infinity.
    #[error("non-finite values produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable or malformed input files.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Io { .. } | Error::EmptyDataset)
    }
}

/// Errors from parsing IDX datasets and SPFG model files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unexpected image dimensions {rows}x{cols}, expected 28x28")]
    BadDimensions { rows: u32, cols: u32 },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {0} out of range")]
    LabelOutOfRange(u8),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed block: {0}")]
    Malformed(String),
}
