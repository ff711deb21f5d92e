//! Software rasterization of projected models: filled silhouettes for
//! synthetic test footage and 1-sigma ellipse overlays for debugging.

use nalgebra::{Matrix2, Vector2};

use crate::camera::CameraModel;
use crate::color::hsv_to_rgb;
use crate::error::Result;
use crate::gaussian::{det2, inv2, Gaussian2D};
use crate::imagesog::RgbFrame;
use crate::kinematics::{pose_model, Pose, SkeletonModel};
use crate::projection::project_gaussian_world;

/// Renders the posed model into a raster frame by painting each projected
/// Gaussian's filled 1-sigma ellipse, far to near.
pub fn render_raster(
    model: &SkeletonModel,
    pose: &Pose,
    cam: &CameraModel,
    background: [u8; 3],
) -> Result<RgbFrame> {
    let posed = pose_model(model, pose)?;
    let mut layers: Vec<(f64, Gaussian2D)> = Vec::with_capacity(posed.items.len());
    for item in &posed.items {
        let depth = cam.to_camera(&item.world.mean).z;
        if let Ok(p) = project_gaussian_world(&item.world, cam) {
            layers.push((depth, p));
        }
    }
    // painter's order: far first
    layers.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut frame = RgbFrame::from_fn(cam.width, cam.height, |_, _| background);
    for (_, g) in &layers {
        fill_ellipse(&mut frame, g);
    }
    Ok(frame)
}

fn fill_ellipse(frame: &mut RgbFrame, g: &Gaussian2D) {
    let det = det2(&g.covariance);
    if det <= 0.0 {
        return;
    }
    let inv = inv2(&g.covariance, det);
    let rgb = hsv_to_rgb(&g.color);
    let rx = g.covariance.m11.max(0.0).sqrt();
    let ry = g.covariance.m22.max(0.0).sqrt();
    let x0 = ((g.mean.x - rx).floor().max(0.0)) as u32;
    let x1 = ((g.mean.x + rx).ceil().min(f64::from(frame.width))) as u32;
    let y0 = ((g.mean.y - ry).floor().max(0.0)) as u32;
    let y1 = ((g.mean.y + ry).ceil().min(f64::from(frame.height))) as u32;
    for y in y0..y1 {
        for x in x0..x1 {
            let p = Vector2::new(f64::from(x) + 0.5, f64::from(y) + 0.5) - g.mean;
            if (inv * p).dot(&p) <= 1.0 {
                frame.put(x, y, rgb);
            }
        }
    }
}

/// Principal square root of a symmetric positive-definite 2x2 matrix.
fn sqrt_spd2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = m.symmetric_eigen();
    let d = Matrix2::new(
        eig.eigenvalues[0].max(0.0).sqrt(),
        0.0,
        0.0,
        eig.eigenvalues[1].max(0.0).sqrt(),
    );
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Draws the 1-sigma outline of each Gaussian over the frame, in order.
pub fn draw_overlay(frame: &mut RgbFrame, gaussians: &[Gaussian2D]) {
    for g in gaussians {
        let a = sqrt_spd2(&g.covariance);
        let rgb = hsv_to_rgb(&g.color);
        let steps = 720;
        for i in 0..steps {
            let phi = std::f64::consts::TAU * f64::from(i) / f64::from(steps);
            let p = g.mean + a * Vector2::new(phi.cos(), phi.sin());
            let (x, y) = (p.x.round(), p.y.round());
            if x >= 0.0 && y >= 0.0 && (x as u32) < frame.width && (y as u32) < frame.height {
                frame.put(x as u32, y as u32, rgb);
            }
        }
    }
}
