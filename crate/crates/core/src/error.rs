use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SvcError>;

#[derive(Debug, Error)]
pub enum SvcError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("not a RIFF/WAVE file: {0}")]
    NotWav(String),
    #[error("unsupported WAV sample format: {0}")]
    UnsupportedFormat(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("clip too short: need at least {needed} samples, got {got}")]
    ClipTooShort { needed: usize, got: usize },
    #[error("no voiced frames in contour")]
    NoVoicedFrames,
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("invalid config: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

impl SvcError {
    /// Process exit code for this failure class: 2 validation, 3 stage
    /// ordering or compatibility, 1 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            SvcError::MissingFile(_)
            | SvcError::NotWav(_)
            | SvcError::UnsupportedFormat(_)
            | SvcError::InvalidArgument(_)
            | SvcError::Config(_) => 2,
            SvcError::Incompatible(_) => 3,
            _ => 1,
        }
    }
}
