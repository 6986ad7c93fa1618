use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("direction is not unit length (norm {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("grid edge {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("non-finite render input on ray {ray}: {what}")]
    RayNumeric { ray: usize, what: String },

    #[error("pixel ({x}, {y}): {source}")]
    Pixel {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle failed at cell {cell:?}: {what}")]
    Oracle { cell: [usize; 3], what: String },

    #[error("fine-tuning diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {what}")]
    Format { path: PathBuf, what: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while decoding `.ploc` / `.plocz` data.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("corrupt stream near byte offset {offset}: {what}")]
    Corrupt { offset: usize, what: String },

    #[error("codebook index {index} out of range for basis function {basis} (codebook length {len})")]
    IndexOutOfRange { basis: usize, index: usize, len: usize },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
