use std::io;

use thiserror::Error;

/// Errors raised by the channel twin.
#[derive(Debug, Error)]
pub enum PemError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("UE position {0:?} lies inside building {1}")]
    UeInsideBuilding([f64; 3], usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "path delay {delay_s:.3e} s outside the unambiguous range [0, {max_s:.3e}) s of the subcarrier grid"
    )]
    DelayAliasing { delay_s: f64, max_s: f64 },

    #[error("time {t} s is not after the previous update at {last} s")]
    NonMonotoneTime { t: f64, last: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("reference channel has zero energy")]
    ZeroReference,

    #[error("training diverged at epoch {epoch}: loss {loss:.4e} exceeds 10x initial {initial:.4e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = PemError> = std::result::Result<T, E>;
