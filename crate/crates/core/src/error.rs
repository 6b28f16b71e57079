use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::LaneRef;
use crate::vehicle::VehicleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid road layout: {0}")]
    InvalidLayout(String),

    #[error("vehicle {0} is not on the ramp or merge lane")]
    NotOnRamp(VehicleId),

    #[error("lane {target:?} is not reachable from {current:?}")]
    UnreachableLane { current: LaneRef, target: LaneRef },

    #[error("vehicles overlap (gap {0:.3} m); treat as a collision")]
    Overlap(f64),

    #[error("trajectory horizons differ: {0} vs {1}")]
    HorizonMismatch(usize, usize),

    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),

    #[error("invalid configuration at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint incompatible with configuration: {0}")]
    Checkpoint(String),

    #[error("replay log {path}:{line}: {reason}")]
    Replay {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
