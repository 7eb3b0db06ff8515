use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("softmax row {row} has no finite entry (fully masked query)")]
    DegenerateRow { row: usize },

    #[error("input of length {len} is shorter than kernel width {width}")]
    TooShort { len: usize, width: usize },

    #[error("head count {0} is not a power of two")]
    UnsupportedHeadCount(usize),

    #[error("identity {index} out of range (model has {count} identities)")]
    IdentityOutOfRange { index: usize, count: usize },

    #[error("requested an empty motion sequence")]
    EmptySequence,

    #[error("lip index set is empty")]
    EmptyLipSet,

    #[error("lip vertex index {index} out of range for {vertices} vertices")]
    LipIndexOutOfRange { index: usize, vertices: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("training diverged at epoch {epoch}, sample {sample}: loss = {loss}")]
    Divergence { epoch: usize, sample: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    AtPath { path: String, source: Box<Error> },
}

impl Error {
    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}
