use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("distractor pool exhausted for sample {sample}: need {needed}, only {available} eligible")]
    PoolExhausted {
        sample: usize,
        needed: usize,
        available: usize,
    },

    #[error("base source yielded no items")]
    EmptyBase,

    #[error("detector failed on {image}: {reason}")]
    DetectorFailure { image: String, reason: String },

    #[error("cannot read image {reference}: {reason}")]
    MissingImage { reference: String, reason: String },

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("question has no tokens after normalization")]
    EmptyQuestion,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid checkpoint: {0}")]
    CheckpointInvalid(String),

    #[error("training diverged at epoch {epoch} (non-finite loss); last good checkpoint: {last_good:?}")]
    Diverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure while doing the work. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::PoolExhausted { .. }
                | Error::EmptyBase
                | Error::IndexOutOfRange { .. }
                | Error::EmptyQuestion
                | Error::ShapeMismatch(_)
                | Error::VocabMismatch(_)
                | Error::TargetOutOfRange { .. }
                | Error::ManifestInvalid(_)
                | Error::InvalidConfig(_)
                | Error::CheckpointInvalid(_)
                | Error::Json { .. }
        )
    }
}
