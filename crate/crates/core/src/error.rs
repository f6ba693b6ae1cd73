use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed line: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown primitive {name:?} in {path}")]
    UnknownPrimitive { path: PathBuf, name: String },

    #[error("duplicate pair ({state}, {object}) in {split}")]
    DuplicatePair {
        split: String,
        state: String,
        object: String,
    },

    #[error("split overlap: pair ({state}, {object}) is both seen and unseen")]
    SplitOverlap { state: String, object: String },

    #[error("invalid composition space: {0}")]
    InvalidSpace(String),

    #[error("degenerate entanglement: every seen pair has a zero entanglement product")]
    DegenerateEntanglement,

    #[error("{path}: truncated file at byte offset {offset}")]
    Truncated { path: PathBuf, offset: u64 },

    #[error("{path}: bad header at byte offset {offset}: {reason}")]
    BadHeader {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown label ({state}, {object}) at record {index}")]
    UnknownLabel {
        index: usize,
        state: usize,
        object: usize,
    },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate {0} feature: zero vector cannot be normalized")]
    DegenerateFeature(&'static str),

    #[error("non-finite {what} at {context}")]
    NonFinite { what: &'static str, context: String },

    #[error("one-sided split: no rows with {0} ground truth")]
    OneSidedSplit(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::DegenerateFeature(_) | Error::DegenerateEntanglement
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
