use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands disagree on shape or arity.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Spatial geometry cannot produce a valid output.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("data corruption: {0}")]
    DataCorruption(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("every pixel in the batch is masked")]
    AllMasked,

    #[error("target has zero variance over the valid pixels")]
    UndefinedVariance,

    #[error("empty evaluation split `{0}`")]
    EmptySplit(String),

    #[error("training diverged: non-finite gradient at step {step} (parameter `{param}`)")]
    TrainingDivergence { step: u64, param: String },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated blob for field `{field}`: expected {expected} bytes, found {found}")]
    Truncated {
        field: String,
        expected: u64,
        found: u64,
    },

    #[error("manifest/blob size disagreement for field `{field}`: expected {expected} bytes, found {found}")]
    SizeMismatch {
        field: String,
        expected: u64,
        found: u64,
    },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(#[from] ParamMismatch),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
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

/// Itemised difference between a checkpoint and the parameters it is loaded into.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ParamMismatch {
    /// Expected by the model, absent from the checkpoint.
    pub missing: Vec<String>,
    /// Present in the checkpoint, unknown to the model.
    pub unexpected: Vec<String>,
    /// (name, expected shape, checkpoint shape)
    pub shape: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl ParamMismatch {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.shape.is_empty()
    }
}

impl std::fmt::Display for ParamMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if !self.missing.is_empty() {
            parts.push(format!("missing [{}]", self.missing.join(", ")));
        }
        if !self.unexpected.is_empty() {
            parts.push(format!("unexpected [{}]", self.unexpected.join(", ")));
        }
        for (name, want, got) in &self.shape {
            parts.push(format!("`{name}` shape {want:?} vs checkpoint {got:?}"));
        }
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for ParamMismatch {}
