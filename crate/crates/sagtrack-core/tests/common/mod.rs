//! Independent oracles and scene builders shared by the integration and
//! acceptance suites.
//!
//! Everything here is implemented against textbook definitions, not against
//! the crate's internal code paths: the projection oracle goes through the
//! dual quadric, the overlap oracle through adaptive 2D quadrature, and the
//! gradient oracle through central finite differences of the public energy
//! evaluation.

#![allow(dead_code)]

use nalgebra::{DVector, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};
use rand::prelude::*;

use sagtrack_core::camera::{ring_rig, CameraModel};
use sagtrack_core::energy::{total_energy_value, EnergyConfig};
use sagtrack_core::gaussian::{pair_energy, Gaussian2D, Gaussian3D};
use sagtrack_core::imagesog::{precompute_self_overlap, ImageSoG};
use sagtrack_core::kinematics::{
    pose_model, Bone, Dof, DofKind, ModelGaussian, Pose, SkeletonModel,
};
use sagtrack_core::projection::project_gaussian_world;

pub fn skin() -> Vector3<f64> {
    Vector3::new(0.07, 0.45, 0.85)
}

// ---------------------------------------------------------------------------
// dual-quadric projection oracle
// ---------------------------------------------------------------------------

fn adjugate3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |i: usize, j: usize| -> f64 {
        let r = [(i + 1) % 3, (i + 2) % 3];
        let s = [(j + 1) % 3, (j + 2) % 3];
        m[(r[0], s[0])] * m[(r[1], s[1])] - m[(r[0], s[1])] * m[(r[1], s[0])]
    };
    Matrix3::from_fn(|i, j| c(j, i))
}

/// Implicit conic (3x3 symmetric, up to scale) of the projected 1-sigma
/// ellipsoid, computed via the dual quadric: `C* = P Q* P^T`, `C = adj(C*)`.
pub fn dual_quadric_conic(g: &Gaussian3D, cam: &CameraModel) -> Matrix3<f64> {
    let mut qstar = Matrix4::<f64>::zeros();
    let block = g.mean * g.mean.transpose() - g.covariance;
    qstar.fixed_view_mut::<3, 3>(0, 0).copy_from(&block);
    qstar.fixed_view_mut::<3, 1>(0, 3).copy_from(&g.mean);
    qstar
        .fixed_view_mut::<1, 3>(3, 0)
        .copy_from(&g.mean.transpose());
    qstar[(3, 3)] = 1.0;

    let mut rt = Matrix3x4::<f64>::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.r);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.t);
    let p = cam.k * rt;
    let cstar = p * qstar * p.transpose();
    adjugate3(&((cstar + cstar.transpose()) * 0.5))
}

/// Implicit conic of the 1-sigma contour of a 2D Gaussian.
pub fn gaussian2d_conic(g: &Gaussian2D) -> Matrix3<f64> {
    let det = g.covariance.m11 * g.covariance.m22 - g.covariance.m12 * g.covariance.m21;
    let s = nalgebra::Matrix2::new(
        g.covariance.m22 / det,
        -g.covariance.m12 / det,
        -g.covariance.m21 / det,
        g.covariance.m11 / det,
    );
    let sm = s * g.mean;
    let mut c = Matrix3::zeros();
    c.fixed_view_mut::<2, 2>(0, 0).copy_from(&s);
    c.fixed_view_mut::<2, 1>(0, 2).copy_from(&(-sm));
    c.fixed_view_mut::<1, 2>(2, 0).copy_from(&(-sm).transpose());
    c[(2, 2)] = g.mean.dot(&sm) - 1.0;
    c
}

/// Scale-free relative distance between two conics: both are normalized to
/// unit Frobenius norm with the sign fixed so the upper-left trace is
/// positive.
pub fn conic_relative_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let norm = |m: &Matrix3<f64>| {
        let sign = if m[(0, 0)] + m[(1, 1)] < 0.0 { -1.0 } else { 1.0 };
        m * (sign / m.norm())
    };
    (norm(a) - norm(b)).norm()
}

// ---------------------------------------------------------------------------
// adaptive quadrature overlap oracle
// ---------------------------------------------------------------------------

fn simpson(f: &impl Fn(f64) -> f64, a: f64, m: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(f, a, lm, m, fa, flm, fm);
    let right = simpson(f, m, rm, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, eps * 0.5, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, eps * 0.5, depth - 1)
    }
}

fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(&f, a, m, b, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, eps, 22)
}

fn eval_unnormalized(g: &Gaussian2D, x: f64, y: f64) -> f64 {
    let det = g.covariance.m11 * g.covariance.m22 - g.covariance.m12 * g.covariance.m21;
    let dx = x - g.mean.x;
    let dy = y - g.mean.y;
    let quad = (g.covariance.m22 * dx * dx - 2.0 * g.covariance.m12 * dx * dy
        + g.covariance.m11 * dy * dy)
        / det;
    (-0.5 * quad).exp()
}

/// Numerical overlap integral of the product of two 2D Gaussians over a
/// bounded domain covering 8 sigma around both supports.
pub fn overlap_quadrature(p: &Gaussian2D, q: &Gaussian2D, rel_eps: f64) -> f64 {
    let sigma_max = |g: &Gaussian2D| {
        let tr = g.covariance.m11 + g.covariance.m22;
        let det = g.covariance.m11 * g.covariance.m22 - g.covariance.m12 * g.covariance.m21;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 + disc).sqrt()
    };
    let reach = 8.0 * sigma_max(p).max(sigma_max(q));
    let lo_x = p.mean.x.min(q.mean.x) - reach;
    let hi_x = p.mean.x.max(q.mean.x) + reach;
    let lo_y = p.mean.y.min(q.mean.y) - reach;
    let hi_y = p.mean.y.max(q.mean.y) + reach;

    // rough scale for the absolute tolerance: peak of the product times area
    let peak = eval_unnormalized(p, q.mean.x, q.mean.y)
        .max(eval_unnormalized(q, p.mean.x, p.mean.y))
        .max(1e-30);
    let eps_outer = rel_eps * peak * (hi_x - lo_x) * (hi_y - lo_y) * 0.01;

    integrate_1d(
        |y| {
            integrate_1d(
                |x| eval_unnormalized(p, x, y) * eval_unnormalized(q, x, y),
                lo_x,
                hi_x,
                eps_outer / (hi_y - lo_y),
            )
        },
        lo_y,
        hi_y,
        eps_outer,
    )
}

// ---------------------------------------------------------------------------
// finite-difference energy gradient oracle
// ---------------------------------------------------------------------------

pub fn fd_energy_gradient(
    pose: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &EnergyConfig,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(pose.len(), |j, _| {
        let mut plus = pose.clone();
        plus.theta[j] += h;
        let mut minus = pose.clone();
        minus.theta[j] -= h;
        let vp = total_energy_value(&plus, model, images, cfg).unwrap();
        let vm = total_energy_value(&minus, model, images, cfg).unwrap();
        (vp - vm) / (2.0 * h)
    })
}

/// Re-derives every image Gaussian's inner sum through the public projection
/// and pair-energy ops and reports the smallest relative distance to its
/// clamp threshold. Trials where a clamp is about to switch are excluded
/// from finite-difference comparisons.
pub fn min_clamp_margin(
    pose: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &EnergyConfig,
) -> f64 {
    let posed = pose_model(model, pose).unwrap();
    let mut margin = f64::INFINITY;
    for (cam, sog) in cfg.cameras.iter().zip(images) {
        let projected: Vec<Gaussian2D> = posed
            .items
            .iter()
            .filter_map(|item| project_gaussian_world(&item.world, cam).ok())
            .collect();
        for (q, &e_qq) in sog.gaussians.iter().zip(&sog.self_overlap) {
            let inner: f64 = projected
                .iter()
                .map(|p| p.weight * pair_energy(p, q, &cfg.color).unwrap())
                .sum();
            margin = margin.min((inner - e_qq).abs() / e_qq.max(1e-12));
        }
    }
    margin
}

/// Componentwise relative gradient error with a floor tied to the gradient's
/// overall magnitude, so near-zero components do not dominate.
pub fn max_relative_gradient_error(analytic: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    let floor = fd.amax().max(analytic.amax()) * 1e-6 + 1e-12;
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// scene builders
// ---------------------------------------------------------------------------

/// Mean distance between the posed Gaussian centers of two poses.
pub fn gaussian_center_error(model: &SkeletonModel, a: &Pose, b: &Pose) -> f64 {
    let pa = pose_model(model, a).unwrap();
    let pb = pose_model(model, b).unwrap();
    pa.items
        .iter()
        .zip(&pb.items)
        .map(|(x, y)| (x.world.mean - y.world.mean).norm())
        .sum::<f64>()
        / pa.items.len() as f64
}

pub fn standard_rig(n: usize) -> Vec<CameraModel> {
    ring_rig(n, 280.0, 320, 240, 600.0, Vector3::new(0.0, 40.0, 0.0), 0.35).unwrap()
}

/// A small articulated test model covering every DOF kind: a 6-DOF root, a
/// prismatic slider and a two-bone revolute chain, with `n_blobs` anisotropic
/// Gaussians spread over the bones.
pub fn chain_model(n_blobs: usize, rng: &mut impl Rng) -> SkeletonModel {
    let mut bones = vec![Bone {
        name: "root".into(),
        parent: None,
        offset: Vector3::zeros(),
        rest_rotation: Matrix3::identity(),
    }];
    let mut dofs = Vec::new();
    for (name, axis) in [("tx", Vector3::x()), ("ty", Vector3::y()), ("tz", Vector3::z())] {
        dofs.push(Dof {
            name: format!("g_{name}"),
            bone: 0,
            kind: DofKind::GlobalTranslation,
            axis,
            limits: (-400.0, 400.0),
        });
    }
    for (name, axis) in [("rx", Vector3::x()), ("ry", Vector3::y()), ("rz", Vector3::z())] {
        dofs.push(Dof {
            name: format!("g_{name}"),
            bone: 0,
            kind: DofKind::Revolute,
            axis,
            limits: (-3.2, 3.2),
        });
    }
    bones.push(Bone {
        name: "slider".into(),
        parent: Some(0),
        offset: Vector3::new(20.0, 0.0, 0.0),
        rest_rotation: Matrix3::identity(),
    });
    dofs.push(Dof {
        name: "slide".into(),
        bone: 1,
        kind: DofKind::Prismatic,
        axis: Vector3::y(),
        limits: (-50.0, 50.0),
    });
    bones.push(Bone {
        name: "upper".into(),
        parent: Some(1),
        offset: Vector3::new(0.0, 30.0, 0.0),
        rest_rotation: Matrix3::identity(),
    });
    dofs.push(Dof {
        name: "upper_rx".into(),
        bone: 2,
        kind: DofKind::Revolute,
        axis: Vector3::x(),
        limits: (-1.6, 1.6),
    });
    bones.push(Bone {
        name: "lower".into(),
        parent: Some(2),
        offset: Vector3::new(0.0, 40.0, 0.0),
        rest_rotation: Matrix3::identity(),
    });
    dofs.push(Dof {
        name: "lower_rz".into(),
        bone: 3,
        kind: DofKind::Revolute,
        axis: Vector3::z(),
        limits: (-1.6, 1.6),
    });

    let gaussians = (0..n_blobs)
        .map(|i| {
            let bone = i % bones.len();
            ModelGaussian {
                bone,
                mean: Vector3::new(
                    rng.random_range(-15.0..15.0),
                    rng.random_range(0.0..30.0),
                    rng.random_range(-10.0..10.0),
                ),
                covariance: Matrix3::from_diagonal(&Vector3::new(
                    rng.random_range(30.0..300.0),
                    rng.random_range(30.0..300.0),
                    rng.random_range(30.0..300.0),
                )),
                color: Vector3::new(
                    0.06 + rng.random_range(0.0..0.03),
                    0.45,
                    0.85,
                ),
                weight: 1.0,
            }
        })
        .collect();
    SkeletonModel {
        bones,
        dofs,
        gaussians,
        landmarks: vec![],
    }
}

/// Image SoGs loosely covering the model's projections, with positional
/// jitter so gradients are informative.
pub fn random_images_for(
    model: &SkeletonModel,
    pose: &Pose,
    cameras: &[CameraModel],
    per_gaussian: usize,
    rng: &mut impl Rng,
) -> Vec<ImageSoG> {
    let posed = pose_model(model, pose).unwrap();
    cameras
        .iter()
        .map(|cam| {
            let mut gs = Vec::new();
            for item in &posed.items {
                let Ok(p) = project_gaussian_world(&item.world, cam) else {
                    continue;
                };
                for _ in 0..per_gaussian {
                    let mean = p.mean
                        + Vector2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
                    let sigma = rng.random_range(2.0..8.0);
                    let color = Vector3::new(
                        (item.world.color.x + rng.random_range(-0.02..0.02)).rem_euclid(1.0),
                        (item.world.color.y + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0),
                        (item.world.color.z + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0),
                    );
                    gs.push(Gaussian2D::isotropic(mean, sigma, color).unwrap());
                }
            }
            precompute_self_overlap(ImageSoG {
                gaussians: gs,
                self_overlap: Vec::new(),
                source_size: (cam.width, cam.height),
            })
            .unwrap()
        })
        .collect()
}

/// Random small pose for the chain model, inside limits.
pub fn small_pose(model: &SkeletonModel, rng: &mut impl Rng) -> Pose {
    Pose {
        theta: DVector::from_iterator(
            model.n_dofs(),
            model.dofs.iter().map(|d| match d.kind {
                DofKind::Revolute => rng.random_range(-0.3..0.3),
                _ => rng.random_range(-20.0..20.0),
            }),
        ),
    }
}
