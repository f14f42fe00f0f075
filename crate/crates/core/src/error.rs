use std::path::PathBuf;

use crate::data::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures of the IDX container parser. Each malformed-input case has its
/// own variant so callers can tell them apart.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad IDX magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported IDX element type 0x{0:02x} (only 0x08 unsigned byte is supported)")]
    UnsupportedType(u8),
    #[error("truncated IDX payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX payload has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label file must be one-dimensional, found {0} dimensions")]
    LabelRank(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("degenerate weight: column {col} has norm {norm:e}")]
    DegenerateWeight { col: usize, norm: f64 },
    #[error("degenerate prototype: mean direction has norm {norm:e}")]
    DegeneratePrototype { norm: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class id {0} already present")]
    DuplicateClass(ClassId),
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
    #[error("class {0} has no support samples")]
    EmptySupport(ClassId),
    #[error("empty support set")]
    EmptySupportSet,
    #[error("recall undefined: class index {0} has no samples")]
    UndefinedRecall(usize),
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("cannot sample: {0}")]
    Sampling(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
