//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensor shapes that must agree do not.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A configuration or hyperparameter value is out of range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Input data violates a precondition (empty bag, bad simplex, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The function handed to the gradient checker is not deterministic.
    #[error("gradient check contract violated: {0}")]
    NonDeterministic(String),

    /// A metric was asked to evaluate an undefined case.
    #[error("metric error: {0}")]
    Metric(String),

    /// Optimizer state tensors are not aligned with the parameter.
    #[error("optimizer state mismatch for {name}: {reason}")]
    OptimizerState { name: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file referenced by a manifest (or the manifest itself) is absent.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// Structural problem in a text file (manifest, config, spec).
    #[error("parse error in {path} (line {line}): {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate bag id in manifest: {0}")]
    DuplicateBagId(String),

    #[error("unknown bag id: {0}")]
    UnknownBagId(String),

    /// Task name absent from a bag's label set.
    #[error("bag {bag_id} has no label for task {task}")]
    MissingLabel { bag_id: String, task: String },

    /// A binary shard is malformed or inconsistent with the manifest.
    #[error("bad shard {path}: {reason}")]
    BadShard { path: PathBuf, reason: String },

    /// Checkpoint container is malformed or of an unsupported version.
    #[error("bad checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    /// Training produced a non-finite loss.
    #[error("training aborted: {0}")]
    NonFiniteLoss(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
