//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector{}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    ZeroVector { row: Option<usize> },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("prompt is empty after tokenization")]
    EmptyPrompt,

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("provider i/o: {0}")]
    ProviderIo(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },

    #[error("image {width}x{height} is too small (need at least 3x3)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("k = {k} exceeds row count {rows}")]
    KExceedsRows { k: usize, rows: usize },

    #[error("budget {budget} exceeds population {population}")]
    BudgetExceedsPopulation { budget: usize, population: usize },

    #[error("caption corpus is empty")]
    EmptyCorpus,

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: usize, diagnostics: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("query set is empty")]
    EmptyQuerySet,

    #[error("training split has a single class")]
    SingleClass,

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("K_m = {0} is not divisible by 4")]
    NonDivisibleKm(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` requires {missing}")]
    StageDependency { stage: String, missing: String },

    #[error("stage `{stage}` failed: {source}")]
    StageFailure {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::StageDependency { .. } => 3,
            _ => 1,
        }
    }
}
