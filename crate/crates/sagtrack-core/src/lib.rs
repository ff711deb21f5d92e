//! Generative articulated pose tracking with a Sum of Anisotropic Gaussians
//! body model.
//!
//! The library models a tracked shape as a collection of unnormalized
//! anisotropic 3D Gaussians rigged to a kinematic skeleton, projects them
//! exactly through calibrated perspective cameras, and fits the pose by
//! maximizing a smooth color-weighted overlap energy against Sum-of-Gaussians
//! approximations of the input images. The energy gradient is fully analytic,
//! so a frame is tracked with a handful of gradient ascent iterations.
//!
//! Module map:
//! - [`gaussian`], [`color`]: Gaussian primitives, overlap integral, color
//!   similarity kernel.
//! - [`camera`], [`projection`]: calibrated cameras and the exact
//!   ellipsoid-to-ellipse perspective projection with analytic derivatives.
//! - [`kinematics`], [`hand`]: skeleton, forward kinematics, pose Jacobians
//!   and the default 26-DOF hand rig.
//! - [`imagesog`]: quad-tree clustering of RGB frames into 2D image Gaussians.
//! - [`energy`]: the pose-fitting objective and its gradient.
//! - [`tracker`], [`calibrate`]: per-frame optimization, sequence tracking and
//!   greedy shape calibration.
//! - [`synth`], [`metrics`], [`io`]: synthetic multi-camera scenes, evaluation
//!   metrics, and the textual file formats used by the CLI.

pub mod camera;
pub mod color;
pub mod energy;
pub mod error;
pub mod gaussian;
pub mod hand;
pub mod imagesog;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod projection;
pub mod render;
pub mod synth;
pub mod tracker;

pub mod calibrate;

#[cfg(test)]
pub(crate) mod testutil;

pub use camera::{ring_rig, CameraModel};
pub use color::{color_similarity, ColorSimilarityConfig};
pub use energy::{e_lim, e_sim, total_energy, EnergyConfig, EnergyReport, ProjectionMode};
pub use error::{Result, SagError};
pub use gaussian::{
    eval_gaussian2, eval_gaussian3, overlap_integral, pair_energy, transform_gaussian3d,
    Gaussian2D, Gaussian3D,
};
pub use imagesog::{quadtree_cluster, ImageSoG, QuadTreeConfig, RgbFrame};
pub use kinematics::{clamp_pose, forward_kinematics, pose_model, Pose, SkeletonModel};
pub use metrics::{compute_metrics, MetricsReport};
pub use projection::{
    cone_matrix, cone_matrix_derivative, project_gaussian, project_gaussian_world,
    project_isotropic_baseline, projection_derivative, ConeMatrix, ProjectionJacobian,
};
pub use synth::{synth_render, NoiseConfig, SyntheticScene};
pub use tracker::{
    extrapolate_init, optimize_pose, track_sequence, OptimizerConfig, TrackState, TrackerConfig,
};

pub use calibrate::{calibrate_model, CalibrationConfig};
