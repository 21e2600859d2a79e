use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("sequence error: {0}")]
    Sequence(String),

    #[error("utterance too short for training: {samples} samples, at least {required} required")]
    TooShort { samples: usize, required: usize },

    #[error("input has {frames} frames, model supports at most {max_frames}")]
    Length { frames: usize, max_frames: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported audio {path}: {reason}")]
    UnsupportedAudio { path: PathBuf, reason: String },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: u64, loss: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from numerical failure (divergence, non-finite
    /// values) rather than bad configuration or input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Diverged { .. })
    }
}
