//! Synthetic multi-camera scenes: the ground-truth oracle for tracking
//! experiments.
//!
//! A scene is a model, a ground-truth pose trajectory and a camera rig.
//! `synth_render` poses the model at a frame's true pose, projects every
//! Gaussian into every camera and converts each projection into an isotropic
//! image Gaussian whose radius preserves the projected footprint area
//! (`sigma = |Sigma_p|^(1/4)`). Optional pixel, color and dropout noise make
//! the data harder on purpose. Rendering is deterministic: the noise stream
//! is derived from the scene seed, the frame index and the camera index.

use nalgebra::Vector2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::CameraModel;
use crate::error::{Result, SagError};
use crate::gaussian::{det2, pair_energy, Gaussian2D};
use crate::imagesog::{precompute_self_overlap, ImageSoG};
use crate::kinematics::{pose_model, Pose, SkeletonModel};
use crate::projection::project_gaussian_world;

/// Observation noise applied to synthesized image Gaussians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of Gaussian jitter on image means, pixels.
    pub mean_jitter_px: f64,
    /// Standard deviation of jitter on HSV components.
    pub color_jitter: f64,
    /// Probability of dropping an image Gaussian entirely.
    pub dropout: f64,
}

impl NoiseConfig {
    fn validate(&self) -> Result<()> {
        if self.mean_jitter_px < 0.0 || self.color_jitter < 0.0 {
            return Err(SagError::InvalidInput(
                "noise deviations must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(SagError::InvalidInput(format!(
                "dropout probability {} outside [0, 1]",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// A ground-truth scene description.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub model: SkeletonModel,
    pub trajectory: Vec<Pose>,
    pub cameras: Vec<CameraModel>,
    pub noise: Option<NoiseConfig>,
    pub seed: u64,
    /// Image-Gaussian granularity. 1 emits one image Gaussian per projected
    /// model Gaussian; `n > 1` tiles each projected 1-sigma ellipse with an
    /// `n x n` grid of small Gaussians, mimicking the quad-tree output of
    /// real footage (a projected silhouette decomposes into many small
    /// blocks, not one blob per body part).
    pub subdivide: u32,
    /// When set, each cell's radius is solved so that the ground-truth pose
    /// meets the cell's occlusion cap exactly. The capped fitting energy then
    /// attains its global maximum precisely at the true pose, which makes
    /// such scenes exact recovery oracles. Cells too far outside the model
    /// density to ever reach their cap are dropped.
    pub balanced_caps: bool,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.cameras.is_empty() {
            return Err(SagError::InvalidInput("scene needs at least one camera".into()));
        }
        for cam in &self.cameras {
            cam.validate()?;
        }
        if self.trajectory.is_empty() {
            return Err(SagError::InvalidInput("scene has an empty trajectory".into()));
        }
        for pose in &self.trajectory {
            if pose.len() != self.model.n_dofs() {
                return Err(SagError::InvalidPose {
                    expected: self.model.n_dofs(),
                    got: pose.len(),
                });
            }
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        if self.subdivide == 0 {
            return Err(SagError::InvalidInput("subdivide must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.trajectory.len()
    }
}

/// One rendered frame: per-camera image SoGs plus the number of model
/// Gaussians that had no valid projection in some camera.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub images: Vec<ImageSoG>,
    pub skipped_projections: usize,
}

fn frame_rng(seed: u64, frame: usize, camera: usize) -> ChaCha8Rng {
    let mix = seed
        ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (camera as u64).wrapping_mul(0xd1b5_4a32_d192_ed03);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Splits one projected ellipse into grid cells `(offset, sigma)` in pixel
/// coordinates; with `n == 1` the whole ellipse stays one Gaussian.
fn subdivide_projection(
    projected: &Gaussian2D,
    n: u32,
) -> Vec<(Vector2<f64>, f64)> {
    if n <= 1 {
        return vec![(projected.mean, det2(&projected.covariance).powf(0.25))];
    }
    let eig = projected.covariance.symmetric_eigen();
    let (i_major, i_minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let a = eig.eigenvalues[i_major].max(0.0).sqrt();
    let b = eig.eigenvalues[i_minor].max(0.0).sqrt();
    let mut u = eig.eigenvectors.column(i_major).into_owned();
    let mut v = eig.eigenvectors.column(i_minor).into_owned();
    if u.x < 0.0 || (u.x == 0.0 && u.y < 0.0) {
        u = -u;
    }
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        v = -v;
    }
    let (cell_w, cell_h) = (2.0 * a / f64::from(n), 2.0 * b / f64::from(n));
    let sigma = 0.5 * (cell_w * cell_h).sqrt();
    let mut cells = Vec::new();
    // one ring beyond the 1-sigma box so rim cells straddle the silhouette
    // edge the way quad-tree blocks on real footage do
    for i in -1..=i64::from(n) {
        for j in -1..=i64::from(n) {
            let x = -a + (i as f64 + 0.5) * cell_w;
            let y = -b + (j as f64 + 0.5) * cell_h;
            // emit when the cell's closest corner reaches the ellipse
            let xi = (x.abs() - 0.5 * cell_w).max(0.0);
            let yi = (y.abs() - 0.5 * cell_h).max(0.0);
            if (xi / a).powi(2) + (yi / b).powi(2) <= 1.0 {
                cells.push((projected.mean + u * x + v * y, sigma));
            }
        }
    }
    if cells.is_empty() {
        cells.push((projected.mean, det2(&projected.covariance).powf(0.25)));
    }
    cells
}

/// Solves `pi sigma^2 = inner(sigma)` for the cell radius at which the
/// ground-truth projections meet the cell's cap exactly. Returns `None` when
/// the cell sits too far out in the model density to ever reach its cap.
fn balance_cell_sigma(
    cell: &Gaussian2D,
    projections: &[Gaussian2D],
    color_cfg: &crate::ColorSimilarityConfig,
) -> Option<f64> {
    let inner = |sigma: f64| -> f64 {
        let probe = Gaussian2D {
            mean: cell.mean,
            covariance: nalgebra::Matrix2::from_diagonal_element(sigma * sigma),
            color: cell.color,
            weight: 1.0,
        };
        projections
            .iter()
            .map(|p| p.weight * pair_energy(p, &probe, color_cfg).unwrap_or(0.0))
            .sum()
    };
    // h(sigma) = pi sigma^2 - inner(sigma): negative near zero for covered
    // cells (local density > 1/2), positive for large sigma
    let h = |sigma: f64| std::f64::consts::PI * sigma * sigma - inner(sigma);
    let mut lo = 1e-3;
    if h(lo) >= 0.0 {
        return None;
    }
    let mut hi = cell.covariance.m11.sqrt().max(1.0);
    let mut expand = 0;
    while h(hi) < 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 40 {
            return None;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Renders the scene at one trajectory frame into per-camera image SoGs.
pub fn synth_render(scene: &SyntheticScene, frame: usize) -> Result<SynthFrame> {
    scene.validate()?;
    let pose = scene.trajectory.get(frame).ok_or_else(|| {
        SagError::InvalidInput(format!(
            "frame {frame} out of range ({} frames)",
            scene.trajectory.len()
        ))
    })?;
    let posed = pose_model(&scene.model, pose)?;
    let color_cfg = crate::ColorSimilarityConfig::default();
    let mut skipped = 0usize;
    let mut images = Vec::with_capacity(scene.cameras.len());
    for (ci, cam) in scene.cameras.iter().enumerate() {
        let mut rng = frame_rng(scene.seed, frame, ci);
        let mut projections = Vec::with_capacity(posed.items.len());
        for item in &posed.items {
            match project_gaussian_world(&item.world, cam) {
                Ok(p) => projections.push(p),
                Err(_) => skipped += 1,
            }
        }
        let mut gaussians = Vec::new();
        for projected in &projections {
            for (cell_mean, sigma) in subdivide_projection(projected, scene.subdivide) {
                let mut cell = Gaussian2D::isotropic(cell_mean, sigma, projected.color)?;
                if scene.balanced_caps {
                    match balance_cell_sigma(&cell, &projections, &color_cfg) {
                        Some(s) => {
                            cell.covariance = nalgebra::Matrix2::from_diagonal_element(s * s);
                        }
                        None => continue,
                    }
                }
                let mut mean = cell.mean;
                let mut color = cell.color;
                if let Some(noise) = &scene.noise {
                    if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
                        continue;
                    }
                    if noise.mean_jitter_px > 0.0 {
                        let jx: f64 = rng.sample(StandardNormal);
                        let jy: f64 = rng.sample(StandardNormal);
                        mean += Vector2::new(jx, jy) * noise.mean_jitter_px;
                    }
                    if noise.color_jitter > 0.0 {
                        let jh: f64 = rng.sample(StandardNormal);
                        let js: f64 = rng.sample(StandardNormal);
                        let jv: f64 = rng.sample(StandardNormal);
                        color.x = (color.x + jh * noise.color_jitter).rem_euclid(1.0);
                        color.y = (color.y + js * noise.color_jitter).clamp(0.0, 1.0);
                        color.z = (color.z + jv * noise.color_jitter).clamp(0.0, 1.0);
                    }
                }
                cell.mean = mean;
                cell.color = color;
                gaussians.push(cell);
            }
        }
        images.push(precompute_self_overlap(ImageSoG {
            gaussians,
            self_overlap: Vec::new(),
            source_size: (cam.width, cam.height),
        })?);
    }
    Ok(SynthFrame {
        images,
        skipped_projections: skipped,
    })
}

/// Renders all frames of a scene.
pub fn synth_render_all(scene: &SyntheticScene) -> Result<Vec<SynthFrame>> {
    (0..scene.n_frames()).map(|f| synth_render(scene, f)).collect()
}
