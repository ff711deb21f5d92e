//! Tracking error metrics: per-frame landmark error, sequence statistics and
//! the error-frequency table.

use nalgebra::Vector3;

use crate::error::{Result, SagError};
use crate::kinematics::{forward_kinematics, Pose, SkeletonModel};

/// Error-frequency thresholds in millimeters.
pub const ERROR_THRESHOLDS_MM: [f64; 5] = [15.0, 20.0, 25.0, 30.0, 45.0];

/// Tracking accuracy summary over a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean Euclidean landmark error per frame, millimeters.
    pub per_frame_error: Vec<f64>,
    /// Mean of the per-frame errors.
    pub mean_error: f64,
    /// Population standard deviation of the per-frame errors.
    pub std_error: f64,
    /// `(threshold mm, % of frames with error < threshold)`.
    pub table: Vec<(f64, f64)>,
}

/// World positions of the evaluation landmarks at a pose: the declared
/// landmark sites when the model has any, otherwise all Gaussian centers.
pub fn landmark_positions(model: &SkeletonModel, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    let fk = forward_kinematics(model, pose)?;
    if model.landmarks.is_empty() {
        Ok(model
            .gaussians
            .iter()
            .map(|g| fk.bone_rotations[g.bone] * g.mean + fk.bone_translations[g.bone])
            .collect())
    } else {
        Ok(model
            .landmarks
            .iter()
            .map(|lm| fk.bone_rotations[lm.bone] * lm.offset + fk.bone_translations[lm.bone])
            .collect())
    }
}

/// Mean distance between the landmark sets of two poses, millimeters.
pub fn pose_error_mm(model: &SkeletonModel, a: &Pose, b: &Pose) -> Result<f64> {
    let pa = landmark_positions(model, a)?;
    let pb = landmark_positions(model, b)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).norm())
        .sum::<f64>()
        / pa.len() as f64)
}

/// Builds a metrics report from raw per-frame errors.
pub fn metrics_from_errors(per_frame_error: Vec<f64>) -> Result<MetricsReport> {
    if per_frame_error.is_empty() {
        return Err(SagError::InvalidInput("no frames to evaluate".into()));
    }
    let n = per_frame_error.len() as f64;
    let mean = per_frame_error.iter().sum::<f64>() / n;
    let var = per_frame_error
        .iter()
        .map(|e| (e - mean).powi(2))
        .sum::<f64>()
        / n;
    let table = ERROR_THRESHOLDS_MM
        .iter()
        .map(|&x| {
            let hits = per_frame_error.iter().filter(|&&e| e < x).count();
            (x, 100.0 * hits as f64 / n)
        })
        .collect();
    Ok(MetricsReport {
        per_frame_error,
        mean_error: mean,
        std_error: var.sqrt(),
        table,
    })
}

/// Compares tracked poses against ground truth.
pub fn compute_metrics(
    tracked: &[Pose],
    truth: &[Pose],
    model: &SkeletonModel,
) -> Result<MetricsReport> {
    if tracked.len() != truth.len() {
        return Err(SagError::InvalidInput(format!(
            "{} tracked frames vs {} truth frames",
            tracked.len(),
            truth.len()
        )));
    }
    let errors = tracked
        .iter()
        .zip(truth)
        .map(|(a, b)| pose_error_mm(model, a, b))
        .collect::<Result<Vec<_>>>()?;
    metrics_from_errors(errors)
}

impl MetricsReport {
    /// Aligned human-readable table.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "frames          {:>10}\nmean error mm   {:>10.3}\nstd error mm    {:>10.3}\n",
            self.per_frame_error.len(),
            self.mean_error,
            self.std_error
        ));
        out.push_str("error < x mm    |");
        for (x, _) in &self.table {
            out.push_str(&format!(" {x:>6.0}"));
        }
        out.push_str("\n% of frames     |");
        for (_, pct) in &self.table {
            out.push_str(&format!(" {pct:>6.1}"));
        }
        out.push('\n');
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn format_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("frames={}\n", self.per_frame_error.len()));
        out.push_str(&format!("mean_error_mm={}\n", self.mean_error));
        out.push_str(&format!("std_error_mm={}\n", self.std_error));
        for (x, pct) in &self.table {
            out.push_str(&format!("pct_below_{x}mm={pct}\n"));
        }
        out
    }
}
