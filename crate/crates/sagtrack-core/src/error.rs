//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SagError>;

/// Errors produced by model construction, geometry, energy evaluation and I/O.
#[derive(Debug, Error)]
pub enum SagError {
    /// A covariance matrix is singular or too ill-conditioned to invert.
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    /// A rigid transform was requested with a non-orthonormal rotation.
    #[error("invalid transform: rotation is not orthonormal (deviation {deviation:.3e})")]
    InvalidTransform { deviation: f64 },

    /// The viewing geometry is degenerate (camera inside the ellipsoid,
    /// Gaussian at or behind the camera center).
    #[error("degenerate view: {0}")]
    DegenerateView(String),

    /// The silhouette conic is not an ellipse; the ellipsoid straddles the
    /// camera's principal plane.
    #[error("non-elliptic projection: {0}")]
    NonEllipticProjection(String),

    /// A pose vector does not match the model's DOF count.
    #[error("invalid pose: expected {expected} DOF values, got {got}")]
    InvalidPose { expected: usize, got: usize },

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A textual file failed to parse; names the file and line.
    #[error("{file}:{line}: parse error: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// An error that occurred while processing a specific frame of a sequence.
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<SagError>,
    },
}

impl SagError {
    /// Wraps an error with the index of the frame being processed.
    pub fn in_frame(self, frame: usize) -> SagError {
        SagError::Frame {
            frame,
            source: Box::new(self),
        }
    }
}
