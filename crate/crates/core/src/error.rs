use std::path::PathBuf;

use crate::models::VabcModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands of an operation disagree on shape.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what}: bad magic number, expected {expected}, found {found}")]
    Format {
        what: String,
        expected: u32,
        found: u32,
    },

    #[error("{what}: truncated file, expected {expected} bytes, found {found}")]
    Length {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("fold is empty")]
    EmptyFold,

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("evaluator unusable: held-out accuracy {accuracy:.4} is below the required {required}")]
    EvaluatorUnusable { accuracy: f64, required: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
        last_good: Box<VabcModel>,
    },

    #[error("config error at `{key}`: {constraint}")]
    Config { key: String, constraint: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numbers going bad rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::Domain(_)
        )
    }
}
