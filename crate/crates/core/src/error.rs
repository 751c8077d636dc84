use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`]),
/// which the CLI prints and the C ABI translates into status values.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty record")]
    EmptyRecord,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("empty document")]
    EmptyDocument,
    #[error("not a feature file")]
    NotAFeatureFile,
    #[error("not an embedding store file")]
    NotAStoreFile,
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("degenerate batch: need at least 2 pairs, got {0}")]
    DegenerateBatch(usize),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("divergence in stage {stage}: {detail}")]
    Divergence { stage: usize, detail: String },
    #[error("divergence: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyRecord => "empty_record",
            Error::InvalidRecord(_) => "invalid_record",
            Error::EmptyDocument => "empty_document",
            Error::NotAFeatureFile => "not_a_feature_file",
            Error::NotAStoreFile => "not_a_store_file",
            Error::CorruptFile(_) => "corrupt_file",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::DegenerateBatch(_) => "degenerate_batch",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::Divergence { .. } | Error::NonFinite(_) => "divergence",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
