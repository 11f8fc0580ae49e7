use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("sequence too short: need at least {need} frames, got {got}")]
    SequenceTooShort { need: usize, got: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid tempo {0} bpm (expected 30..=300)")]
    InvalidTempo(f64),
    #[error("window length {0} is not divisible by 8")]
    BadLength(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("divergence detected at epoch {epoch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("invalid number of diffusion steps: {0}")]
    InvalidSteps(usize),
    #[error("diffusion step {step} out of range 0..{total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid sampling step count {requested} for schedule of {total} steps")]
    InvalidStepCount { requested: usize, total: usize },
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("no music beats")]
    NoMusicBeats,
    #[error("IndexOutOfRange: {0}")]
    IndexOutOfRange(String),
    #[error("RatioViolation: {0}")]
    RatioViolation(String),
    #[error("clip too short: {len} frames < window {window}")]
    ClipTooShort { len: usize, window: usize },
    #[error("invariant violation in clip {clip}: {reason}")]
    InvariantViolation { clip: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name, used in service error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateRotation(_) => "DegenerateRotation",
            Error::NotARotation(_) => "NotARotation",
            Error::SequenceTooShort { .. } => "SequenceTooShort",
            Error::Format(_) => "FormatError",
            Error::Io { .. } => "IoError",
            Error::InvalidTempo(_) => "InvalidTempo",
            Error::BadLength(_) => "BadLength",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::InvalidSteps(_) => "InvalidSteps",
            Error::StepOutOfRange { .. } => "StepOutOfRange",
            Error::InvalidStepCount { .. } => "InvalidStepCount",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::NoMusicBeats => "NoMusicBeats",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::RatioViolation(_) => "RatioViolation",
            Error::ClipTooShort { .. } => "ClipTooShort",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}
