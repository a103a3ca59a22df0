use std::path::PathBuf;

use crate::geometry::Pose;

/// Errors produced by the mmslam core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed point cloud file {path}: {reason}")]
    CloudFormat { path: PathBuf, reason: String },

    #[error("segmentation frame {frame}{}: {reason}", instance.map(|i| format!(", instance {i}")).unwrap_or_default())]
    Segmentation {
        frame: u64,
        instance: Option<u32>,
        reason: String,
    },

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("degenerate registration: {reason}")]
    DegenerateRegistration { reason: String, init: Pose },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("trajectory alignment: {0}")]
    Alignment(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
