//! Shared random generators for unit tests.

use nalgebra::{DVector, Matrix2, Matrix3, Vector3};
use rand::Rng;

use crate::kinematics::{Pose, SkeletonModel};

/// Uniformly-ish random rotation via QR of a random matrix, det fixed to +1.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let qr = m.qr();
    let mut q = qr.q();
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Random SPD 3x3 with eigenvalues drawn from `range`.
pub fn random_spd3(rng: &mut impl Rng, lo: f64, hi: f64) -> Matrix3<f64> {
    let r = random_rotation(rng);
    let d = Matrix3::from_diagonal(&Vector3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ));
    let m = r * d * r.transpose();
    (m + m.transpose()) * 0.5
}

/// Random SPD 2x2 with eigenvalues drawn from `range`.
pub fn random_spd2(rng: &mut impl Rng, lo: f64, hi: f64) -> Matrix2<f64> {
    let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let rot = Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos());
    let d = Matrix2::new(rng.random_range(lo..hi), 0.0, 0.0, rng.random_range(lo..hi));
    let m = rot * d * rot.transpose();
    (m + m.transpose()) * 0.5
}

/// Random pose with every DOF inside the middle half of its limit range.
pub fn random_pose(model: &SkeletonModel, rng: &mut impl Rng) -> Pose {
    let theta = DVector::from_iterator(
        model.n_dofs(),
        model.dofs.iter().map(|d| {
            let span = d.limits.1 - d.limits.0;
            let mid = 0.5 * (d.limits.0 + d.limits.1);
            mid + rng.random_range(-0.25..0.25) * span
        }),
    );
    Pose { theta }
}
