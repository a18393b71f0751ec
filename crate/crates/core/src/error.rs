use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("gaussian {index}: {msg}")]
    InvalidGaussian { index: usize, msg: String },

    #[error("camera {index}: {msg}")]
    InvalidCamera { index: usize, msg: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("point is behind the camera (camera-space z = {z})")]
    BehindCamera { z: f64 },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("degenerate ray: denominator {denom:e} underflows")]
    DegenerateRay { denom: f64 },

    #[error("degenerate axes: rejection norm {norm:e}")]
    DegenerateAxes { norm: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
