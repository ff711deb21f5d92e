//! Greedy model-shape calibration.
//!
//! The shape space has 3 global parameters (overall scale, palm width,
//! finger length) plus 3 per-Gaussian scales along the local principal axes.
//! All parameters are multiplicative with neutral value 1. A coordinate-wise
//! greedy search sweeps every parameter, trying a step up and a step down,
//! and keeps a change only if the summed fitting energy over the calibration
//! frames increases; the step size halves each pass.

use nalgebra::{Matrix3, Vector3};

use crate::energy::{total_energy_value, EnergyConfig};
use crate::error::{Result, SagError};
use crate::imagesog::ImageSoG;
use crate::kinematics::{Pose, SkeletonModel};

/// Greedy search schedule.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    /// Number of sweeps over all parameters; the step halves each pass.
    pub passes: usize,
    /// Initial multiplicative step (0.1 tries factors 1.1 and 1/1.1).
    pub initial_delta: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            passes: 5,
            initial_delta: 0.1,
        }
    }
}

/// Multiplicative shape parameters; all 1 leaves the model untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    /// Uniform scale of all lengths.
    pub global_scale: f64,
    /// Lateral (x) scale of the root bone's children and Gaussians.
    pub palm_width: f64,
    /// Longitudinal (y) scale of non-root bones and their Gaussians.
    pub finger_length: f64,
    /// Per-Gaussian scales along the local principal axes, largest axis
    /// first.
    pub per_gaussian: Vec<[f64; 3]>,
}

impl ShapeParams {
    pub fn identity(n_gaussians: usize) -> Self {
        Self {
            global_scale: 1.0,
            palm_width: 1.0,
            finger_length: 1.0,
            per_gaussian: vec![[1.0; 3]; n_gaussians],
        }
    }

    fn validate(&self, n_gaussians: usize) -> Result<()> {
        let all_positive = self.global_scale > 0.0
            && self.palm_width > 0.0
            && self.finger_length > 0.0
            && self
                .per_gaussian
                .iter()
                .all(|a| a.iter().all(|&s| s > 0.0));
        if !all_positive {
            return Err(SagError::InvalidInput(
                "shape scales must be positive".into(),
            ));
        }
        if self.per_gaussian.len() != n_gaussians {
            return Err(SagError::InvalidInput(format!(
                "{} per-gaussian scale triples for {} gaussians",
                self.per_gaussian.len(),
                n_gaussians
            )));
        }
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric 3x3 with deterministic ordering:
/// eigenvalues descending, each eigenvector's largest component positive.
fn sorted_eigen(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = m.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = Vector3::zeros();
    let mut vectors = Matrix3::zeros();
    for (slot, &src) in order.iter().enumerate() {
        values[slot] = eig.eigenvalues[src];
        let mut v = eig.eigenvectors.column(src).into_owned();
        let dominant = v.iamax();
        if v[dominant] < 0.0 {
            v = -v;
        }
        vectors.set_column(slot, &v);
    }
    (values, vectors)
}

/// Applies the shape parameters to a base model.
pub fn apply_shape(base: &SkeletonModel, params: &ShapeParams) -> Result<SkeletonModel> {
    params.validate(base.gaussians.len())?;
    let s = params.global_scale;
    let w = params.palm_width;
    let l = params.finger_length;
    let mut model = base.clone();

    let is_root = |b: usize| base.bones[b].parent.is_none();
    let parent_is_root =
        |b: usize| base.bones[b].parent.is_some_and(|p| base.bones[p].parent.is_none());

    for (b, bone) in model.bones.iter_mut().enumerate() {
        bone.offset *= s;
        if parent_is_root(b) {
            bone.offset.x *= w;
        } else if bone.parent.is_some() {
            bone.offset *= l;
        }
    }
    for (gi, g) in model.gaussians.iter_mut().enumerate() {
        g.mean *= s;
        g.covariance *= s * s;
        if is_root(g.bone) {
            let d = Matrix3::from_diagonal(&Vector3::new(w, 1.0, 1.0));
            g.mean.x *= w;
            g.covariance = d * g.covariance * d;
        } else {
            let d = Matrix3::from_diagonal(&Vector3::new(1.0, l, 1.0));
            g.mean.y *= l;
            g.covariance = d * g.covariance * d;
        }
        let axes = params.per_gaussian[gi];
        if axes != [1.0, 1.0, 1.0] {
            let (values, vectors) = sorted_eigen(&g.covariance);
            let scaled = Vector3::new(
                values[0] * axes[0] * axes[0],
                values[1] * axes[1] * axes[1],
                values[2] * axes[2] * axes[2],
            );
            let cov = vectors * Matrix3::from_diagonal(&scaled) * vectors.transpose();
            g.covariance = (cov + cov.transpose()) * 0.5;
        }
    }
    for lm in &mut model.landmarks {
        lm.offset *= s;
        if is_root(lm.bone) {
            lm.offset.x *= w;
        } else {
            lm.offset.y *= l;
        }
    }
    model.validate()?;
    Ok(model)
}

/// One calibration observation: a known rough pose and its per-camera image
/// SoGs.
pub type CalibrationFrame = (Pose, Vec<ImageSoG>);

fn objective(
    base: &SkeletonModel,
    params: &ShapeParams,
    frames: &[CalibrationFrame],
    ecfg: &EnergyConfig,
) -> Result<f64> {
    let model = apply_shape(base, params)?;
    let mut total = 0.0;
    for (pose, images) in frames {
        total += total_energy_value(pose, &model, images, ecfg)?;
    }
    Ok(total)
}

/// Calibrates shape parameters against the given frames and returns the
/// reshaped model together with the accepted parameters.
pub fn calibrate_model_detailed(
    base: &SkeletonModel,
    frames: &[CalibrationFrame],
    cfg: &CalibrationConfig,
    ecfg: &EnergyConfig,
) -> Result<(SkeletonModel, ShapeParams)> {
    base.validate()?;
    if cfg.passes == 0 {
        return Ok((base.clone(), ShapeParams::identity(base.gaussians.len())));
    }
    if frames.is_empty() {
        return Err(SagError::InvalidInput(
            "calibration needs at least one frame".into(),
        ));
    }
    let n = base.gaussians.len();
    let mut params = ShapeParams::identity(n);
    let mut best = objective(base, &params, frames, ecfg)?;
    let mut delta = cfg.initial_delta;

    // parameter index space: 0..3 globals, then gaussian-major axis triples
    let n_params = 3 + 3 * n;
    let read = |p: &ShapeParams, k: usize| -> f64 {
        match k {
            0 => p.global_scale,
            1 => p.palm_width,
            2 => p.finger_length,
            _ => p.per_gaussian[(k - 3) / 3][(k - 3) % 3],
        }
    };
    let write = |p: &mut ShapeParams, k: usize, v: f64| match k {
        0 => p.global_scale = v,
        1 => p.palm_width = v,
        2 => p.finger_length = v,
        _ => p.per_gaussian[(k - 3) / 3][(k - 3) % 3] = v,
    };

    for _ in 0..cfg.passes {
        let mut improved = false;
        for k in 0..n_params {
            for factor in [1.0 + delta, 1.0 / (1.0 + delta)] {
                let mut candidate = params.clone();
                write(&mut candidate, k, read(&params, k) * factor);
                let value = objective(base, &candidate, frames, ecfg)?;
                if value > best {
                    params = candidate;
                    best = value;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        delta *= 0.5;
    }
    Ok((apply_shape(base, &params)?, params))
}

/// Greedy shape calibration; see [`calibrate_model_detailed`].
pub fn calibrate_model(
    base: &SkeletonModel,
    frames: &[CalibrationFrame],
    cfg: &CalibrationConfig,
    ecfg: &EnergyConfig,
) -> Result<SkeletonModel> {
    Ok(calibrate_model_detailed(base, frames, cfg, ecfg)?.0)
}
