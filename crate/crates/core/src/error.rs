use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point at z = {z} is behind the camera")]
    BehindCamera { z: f64 },

    #[error("grid {width}x{height} is too small (need at least {min_width}x{min_height})")]
    GridTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },

    #[error("normal equations are singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("only {:.1}% of pixels remain in view", fraction * 100.0)]
    DegenerateOverlap { fraction: f64 },

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("instance with {pixels} pixels exceeds the dense-jacobian limit of {limit}")]
    InstanceTooLarge { pixels: usize, limit: usize },

    #[error("degenerate depth: {0}")]
    DegenerateDepth(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step}: total loss is {loss}")]
    DivergenceDetected { step: usize, loss: f64 },

    #[error("no valid pixels to evaluate")]
    NoValidPixels,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("{}: byte offset {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
