//! Navigation in environments with moving obstacles, driven by a depth camera.
//!
//! The crate is organised as a pipeline:
//!
//! * [`geom`] — camera model, depth images, point clouds.
//! * [`sim`] — deterministic scenario simulation and depth rendering.
//! * [`perception`] — voxel filtering, clustering, Kalman tracking and
//!   dynamic/static classification of tracked objects.
//! * [`env_model`] — hybrid environment representation: a log-odds occupancy
//!   grid for static structure plus moving ellipsoids for dynamic obstacles.
//! * [`plan`] — kinodynamic search for an initial trajectory and gradient-based
//!   B-spline refinement against the hybrid environment.
//! * [`pipeline`] — closed-loop episodes, benchmark harness, trace recording.

pub mod env_model;
pub mod geom;
pub mod perception;
pub mod pipeline;
pub mod plan;
pub mod sim;

pub use geom::{CameraIntrinsics, CameraPose, DepthImage, PointCloud, Vec3};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A rotation matrix failed the orthonormality check.
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    /// Camera intrinsics with non-positive focal lengths or zero size.
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    /// Depth values must be strictly positive when unprojecting.
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    /// A scenario file or scenario construction was rejected.
    #[error("invalid scenario: {0}")]
    Scenario(String),
    /// A configuration file could not be parsed or contained bad values.
    #[error("invalid config: {0}")]
    Config(String),
    /// Planning start state is already in collision.
    #[error("start state in collision")]
    StartInCollision,
    /// The optimizer could not produce a collision-free trajectory.
    #[error("trajectory optimization infeasible: {0}")]
    Infeasible(String),
    /// A trace directory is missing required files or is malformed.
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
