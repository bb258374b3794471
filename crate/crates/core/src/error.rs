use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{extra} trailing bytes after declared payload")]
    TrailingBytes { extra: usize },
    #[error("label {label} out of range (classes: {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("insufficient samples for class {class}: requested {requested}, available {available}")]
    InsufficientSamples {
        class: usize,
        requested: usize,
        available: usize,
    },
    #[error("cannot normalize an all-zero vector")]
    ZeroVector,
    #[error("qubit {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("two-qubit gate applied to the same qubit {0}")]
    SameQubit(usize),
    #[error("parameter index {index} out of range ({count} parameters)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("cache does not match the requested backward pass: {0}")]
    CacheMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    BadVersion { found: u16, supported: u16 },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
