//! Pinhole camera model with full perspective intrinsics and rigid
//! world-to-camera extrinsics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, SagError};

/// A calibrated perspective camera.
///
/// The camera frame convention is x right, y down, z forward; a world point
/// `X` maps to camera coordinates `x = R X + t` and to the pixel
/// `u = K x / x.z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    /// Upper-triangular intrinsics with `k[2][2] = 1`.
    pub k: Matrix3<f64>,
    /// World-to-camera rotation (orthonormal, det +1).
    pub r: Matrix3<f64>,
    /// World-to-camera translation.
    pub t: Vector3<f64>,
    /// Image width in pixels.
    pub width: u32,
    /// Image height in pixels.
    pub height: u32,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            k,
            r,
            t,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// A camera with focal length `f`, principal point at the image center
    /// and identity extrinsics.
    pub fn simple(f: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(
            Matrix3::new(
                f,
                0.0,
                f64::from(width) / 2.0,
                0.0,
                f,
                f64::from(height) / 2.0,
                0.0,
                0.0,
                1.0,
            ),
            Matrix3::identity(),
            Vector3::zeros(),
            width,
            height,
        )
    }

    /// Places the camera at `center` looking at `target`, with the image
    /// y axis pointing opposite `up`.
    pub fn look_at(
        f: f64,
        width: u32,
        height: u32,
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let z = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| SagError::InvalidInput("camera center equals target".into()))?;
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // view axis parallel to up; fall back to an arbitrary lateral axis
            x = z.cross(&Vector3::new(0.0, 1.0, 0.0));
            if x.norm() < 1e-9 {
                x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -r * center;
        let k = Matrix3::new(
            f,
            0.0,
            f64::from(width) / 2.0,
            0.0,
            f,
            f64::from(height) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, r, t, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        if k.m21 != 0.0 || k.m31 != 0.0 || k.m32 != 0.0 {
            return Err(SagError::InvalidInput(
                "intrinsics must be upper-triangular".into(),
            ));
        }
        if (k.m33 - 1.0).abs() > 1e-12 {
            return Err(SagError::InvalidInput("intrinsics must have k[2][2] = 1".into()));
        }
        if k.m11 <= 0.0 || k.m22 <= 0.0 {
            return Err(SagError::InvalidInput(
                "focal lengths must be positive".into(),
            ));
        }
        let deviation = (self.r.transpose() * self.r - Matrix3::identity()).norm();
        if deviation > 1e-9 || (self.r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SagError::InvalidTransform { deviation });
        }
        Ok(())
    }

    /// World point to camera frame.
    #[inline]
    pub fn to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.r * x_world + self.t
    }

    /// Camera position in world coordinates.
    pub fn center_world(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Mean focal length, used by the scaled-orthographic baseline.
    #[inline]
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.k.m11 + self.k.m22)
    }
}

/// Builds a ring of `n` cameras of focal length `f` at distance `radius`
/// from `target`, elevated by `elevation` radians above the horizontal
/// plane, all looking at `target`.
pub fn ring_rig(
    n: usize,
    f: f64,
    width: u32,
    height: u32,
    radius: f64,
    target: Vector3<f64>,
    elevation: f64,
) -> Result<Vec<CameraModel>> {
    if n == 0 {
        return Err(SagError::InvalidInput("rig needs at least one camera".into()));
    }
    (0..n)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let center = target
                + Vector3::new(
                    radius * elevation.cos() * phi.cos(),
                    radius * elevation.cos() * phi.sin(),
                    radius * elevation.sin(),
                );
            CameraModel::look_at(f, width, height, center, target, Vector3::new(0.0, 0.0, 1.0))
        })
        .collect()
}
