use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DasError {
    #[error("vector norm {norm:e} is at or below the zero-norm threshold")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("K = {k} is out of range for dimension {dim}")]
    KOutOfRange { k: usize, dim: usize },

    #[error("k = {k} is too large for {n} points")]
    KTooLarge { k: usize, n: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("need {needed} classes but only {available} are available")]
    NotEnoughClasses { needed: usize, available: usize },

    #[error("no valid triplet can be formed from the given labels")]
    NoValidTriplet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("file {0} contains no data rows")]
    EmptyFile(PathBuf),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<DasError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DasError {
    /// True for errors caused by bad user input (configuration, data files)
    /// rather than by something going wrong during a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            DasError::InvalidConfig(_)
            | DasError::Parse { .. }
            | DasError::EmptyFile(_)
            | DasError::Json(_)
            | DasError::KOutOfRange { .. }
            | DasError::NotEnoughClasses { .. } => true,
            DasError::AtStep { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> DasError {
        match self {
            e @ DasError::AtStep { .. } | e @ DasError::NonFiniteLoss { .. } => e,
            other => DasError::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }
}
