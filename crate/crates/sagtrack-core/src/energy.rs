//! The pose-fitting objective and its analytic gradient.
//!
//! For every camera, the posed model Gaussians are projected to 2D and
//! compared against the image Sum-of-Gaussians:
//!
//! ```text
//! E_sim = sum_cameras sum_q min( sum_p w_p d(c_p, c_q) D_pq , E_qq )
//! ```
//!
//! The `min` caps each image Gaussian's contribution at its own footprint
//! `E_qq`, a smooth occlusion heuristic: several model Gaussians stacked on
//! the same image region cannot earn more than the region itself. The total
//! energy adds a quadratic penalty for DOFs outside their limits:
//!
//! ```text
//! E(Theta) = E_sim(Theta) - w_l E_lim(Theta)
//! ```
//!
//! The gradient chains the kinematic Jacobians through the cone matrix, the
//! projection equations and the closed-form overlap `D_pq`. Image Gaussians
//! sitting at or above their cap contribute zero gradient; model Gaussians
//! with no elliptic projection in a camera contribute nothing there.
//!
//! Both the value and the gradient are sums of independent pair terms;
//! evaluation parallelizes over image Gaussians with a fixed-order reduction
//! so results are bit-identical regardless of thread count.

use nalgebra::{DVector, Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::color::{color_similarity, ColorSimilarityConfig};
use crate::error::{Result, SagError};
use crate::gaussian::{det2, inv2, Gaussian2D};
use crate::imagesog::ImageSoG;
use crate::kinematics::{pose_model, Pose, PosedGaussians, SkeletonModel};
use crate::projection::{
    baseline_derivative, cone_matrix_derivative, cone_matrix_from_precision, ProjectionContext,
    ProjectionJacobian, NEAR_PLANE,
};

/// Which projection model feeds the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// Exact perspective projection of anisotropic Gaussians.
    #[default]
    ExactSag,
    /// Isotropic spheres with scaled-orthographic projection (the
    /// predecessor model, kept as a comparison baseline). Anisotropic model
    /// Gaussians are replaced by volume-equivalent spheres.
    IsotropicBaseline,
}

/// Energy evaluation parameters.
#[derive(Debug, Clone)]
pub struct EnergyConfig {
    /// Weight of the joint-limit penalty.
    pub w_l: f64,
    pub color: ColorSimilarityConfig,
    pub cameras: Vec<CameraModel>,
    pub mode: ProjectionMode,
    /// Pairs farther apart than this Mahalanobis distance are skipped; at
    /// the default of 9 the dropped terms are below `exp(-40.5)` relative.
    pub mahalanobis_cutoff: f64,
}

impl EnergyConfig {
    pub fn new(cameras: Vec<CameraModel>) -> Self {
        Self {
            w_l: 0.1,
            color: ColorSimilarityConfig::default(),
            cameras,
            mode: ProjectionMode::ExactSag,
            mahalanobis_cutoff: 9.0,
        }
    }
}

/// Energy value, gradient and per-camera diagnostics.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    /// The combined objective `E_sim - w_l E_lim`.
    pub value: f64,
    /// d value / d Theta, one entry per DOF.
    pub gradient: DVector<f64>,
    /// `E_sim` restricted to each camera.
    pub per_camera_sim: Vec<f64>,
    /// Number of image Gaussians capped at their self-overlap.
    pub clamped_count: usize,
}

/// One projected model Gaussian with everything the pair loop needs.
struct ProjectedEntry {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    det: f64,
    color: Vector3<f64>,
    weight: f64,
    /// Per chain-DOF: index, d mu_p, d Sigma_p, and 1/2 tr(Sigma_p^-1 dSigma_p).
    jac: Vec<(usize, Vector2<f64>, Matrix2<f64>, f64)>,
}

fn project_entries(
    posed: &PosedGaussians,
    cam: &CameraModel,
    mode: ProjectionMode,
    with_grad: bool,
) -> Vec<ProjectedEntry> {
    let mut entries = Vec::with_capacity(posed.items.len());
    for item in &posed.items {
        let mu_c = cam.to_camera(&item.world.mean);
        if mu_c.z <= NEAR_PLANE {
            continue;
        }
        match mode {
            ProjectionMode::ExactSag => {
                let w_c = cam.r * item.sigma_inv * cam.r.transpose();
                let m = match cone_matrix_from_precision(&mu_c, &w_c) {
                    Ok(m) => m,
                    Err(_) => continue,
                };
                let ctx = match ProjectionContext::new(&m, &cam.k) {
                    Ok(c) => c,
                    Err(_) => continue,
                };
                let mean = ctx.mean(&cam.k);
                let cov = ctx.covariance();
                let det = det2(&cov);
                if det <= 0.0 {
                    continue;
                }
                let cov_inv = inv2(&cov, det);
                let mut jac = Vec::new();
                if with_grad {
                    jac.reserve(item.jacobians.len());
                    for dj in &item.jacobians {
                        let dmu_c = cam.r * dj.dmu;
                        let dw_c = cam.r * dj.dsigma_inv * cam.r.transpose();
                        let dm = cone_matrix_derivative(&mu_c, &w_c, &dmu_c, &dw_c);
                        let pj = ctx.derivative(&dm);
                        let t1 = 0.5 * trace_sym_product(&cov_inv, &pj.dsigma);
                        jac.push((dj.dof, pj.dmu, pj.dsigma, t1));
                    }
                }
                entries.push(ProjectedEntry {
                    mean,
                    cov,
                    det,
                    color: item.world.color,
                    weight: item.world.weight,
                    jac,
                });
            }
            ProjectionMode::IsotropicBaseline => {
                // volume-equivalent sphere; its radius is pose invariant
                let sigma = item.world.covariance.determinant().powf(1.0 / 6.0);
                let k = &cam.k;
                let mean = Vector2::new(
                    (k.m11 * mu_c.x + k.m12 * mu_c.y) / mu_c.z + k.m13,
                    k.m22 * mu_c.y / mu_c.z + k.m23,
                );
                let sigma_p = cam.mean_focal() * sigma / mu_c.z;
                let cov = Matrix2::from_diagonal_element(sigma_p * sigma_p);
                let det = sigma_p.powi(4);
                let cov_inv = Matrix2::from_diagonal_element(1.0 / (sigma_p * sigma_p));
                let mut jac = Vec::new();
                if with_grad {
                    jac.reserve(item.jacobians.len());
                    for dj in &item.jacobians {
                        let dmu_c = cam.r * dj.dmu;
                        let pj: ProjectionJacobian =
                            baseline_derivative(&mu_c, sigma, &dmu_c, cam);
                        let t1 = 0.5 * trace_sym_product(&cov_inv, &pj.dsigma);
                        jac.push((dj.dof, pj.dmu, pj.dsigma, t1));
                    }
                }
                entries.push(ProjectedEntry {
                    mean,
                    cov,
                    det,
                    color: item.world.color,
                    weight: item.world.weight,
                    jac,
                });
            }
        }
    }
    entries
}

/// tr(A B) for symmetric 2x2 matrices.
#[inline]
fn trace_sym_product(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.m11 * b.m11 + 2.0 * a.m12 * b.m12 + a.m22 * b.m22
}

/// Contribution of one image Gaussian: capped value, clamp flag and sparse
/// gradient terms.
type PerImageGaussian = (f64, bool, Vec<(usize, f64)>);

fn image_gaussian_term(
    entries: &[ProjectedEntry],
    q_mean: Vector2<f64>,
    q_sigma2: f64,
    q_color: &Vector3<f64>,
    e_qq: f64,
    color_cfg: &ColorSimilarityConfig,
    cutoff_sq: f64,
    with_grad: bool,
) -> PerImageGaussian {
    let mut inner = 0.0;
    let mut grad_terms: Vec<(usize, f64)> = Vec::new();
    for p in entries {
        let d_color = color_similarity(&p.color, q_color, color_cfg);
        if d_color == 0.0 {
            continue;
        }
        let s = Matrix2::new(
            p.cov.m11 + q_sigma2,
            p.cov.m12,
            p.cov.m21,
            p.cov.m22 + q_sigma2,
        );
        let det_s = det2(&s);
        if det_s <= 0.0 {
            continue;
        }
        let inv_s = inv2(&s, det_s);
        let delta = p.mean - q_mean;
        let u = inv_s * delta;
        let quad = u.dot(&delta);
        if quad > cutoff_sq {
            continue;
        }
        let det_q = q_sigma2 * q_sigma2;
        let d_pq =
            2.0 * std::f64::consts::PI * (p.det * det_q / det_s).sqrt() * (-0.5 * quad).exp();
        let scale = p.weight * d_color;
        inner += scale * d_pq;
        if with_grad {
            for (dof, dmu, dsigma, t1) in &p.jac {
                let dd = d_pq
                    * (t1 - 0.5 * trace_sym_product(&inv_s, dsigma) - dmu.dot(&u)
                        + 0.5
                            * (u.x * u.x * dsigma.m11
                                + 2.0 * u.x * u.y * dsigma.m12
                                + u.y * u.y * dsigma.m22));
                grad_terms.push((*dof, scale * dd));
            }
        }
    }
    if inner >= e_qq {
        // occlusion cap: tied or exceeded caps take the clamped branch
        (e_qq, true, Vec::new())
    } else {
        (inner, false, grad_terms)
    }
}

struct SimResult {
    value: f64,
    gradient: DVector<f64>,
    per_camera: Vec<f64>,
    clamped: usize,
}

fn e_sim_full(
    posed: &PosedGaussians,
    images: &[ImageSoG],
    cfg: &EnergyConfig,
    n_dofs: usize,
    with_grad: bool,
) -> Result<SimResult> {
    if images.len() != cfg.cameras.len() {
        return Err(SagError::InvalidInput(format!(
            "{} image SoGs for {} cameras",
            images.len(),
            cfg.cameras.len()
        )));
    }
    let cutoff_sq = cfg.mahalanobis_cutoff * cfg.mahalanobis_cutoff;
    let mut value = 0.0;
    let mut gradient = DVector::zeros(n_dofs);
    let mut per_camera = Vec::with_capacity(cfg.cameras.len());
    let mut clamped = 0usize;
    for (cam, sog) in cfg.cameras.iter().zip(images) {
        let entries = project_entries(posed, cam, cfg.mode, with_grad);
        let terms: Vec<PerImageGaussian> = (0..sog.gaussians.len())
            .into_par_iter()
            .map(|qi| {
                let q = &sog.gaussians[qi];
                image_gaussian_term(
                    &entries,
                    q.mean,
                    q.covariance.m11,
                    &q.color,
                    sog.self_overlap[qi],
                    &cfg.color,
                    cutoff_sq,
                    with_grad,
                )
            })
            .collect();
        // fixed-order reduction keeps results independent of thread count
        let mut cam_value = 0.0;
        for (v, was_clamped, grads) in terms {
            cam_value += v;
            clamped += usize::from(was_clamped);
            for (dof, g) in grads {
                gradient[dof] += g;
            }
        }
        value += cam_value;
        per_camera.push(cam_value);
    }
    Ok(SimResult {
        value,
        gradient,
        per_camera,
        clamped,
    })
}

/// The similarity energy `E_sim` of a posed model against per-camera image
/// SoGs (no limit penalty).
pub fn e_sim(posed: &PosedGaussians, images: &[ImageSoG], cfg: &EnergyConfig) -> Result<f64> {
    let n_dofs = posed
        .items
        .iter()
        .flat_map(|i| i.jacobians.iter().map(|j| j.dof + 1))
        .max()
        .unwrap_or(0);
    Ok(e_sim_full(posed, images, cfg, n_dofs, false)?.value)
}

/// Quadratic penalty for DOFs outside their limits; zero and flat inside.
pub fn e_lim(pose: &Pose, model: &SkeletonModel) -> Result<f64> {
    if pose.len() != model.n_dofs() {
        return Err(SagError::InvalidPose {
            expected: model.n_dofs(),
            got: pose.len(),
        });
    }
    Ok(pose
        .theta
        .iter()
        .zip(&model.dofs)
        .map(|(&v, dof)| {
            if v > dof.limits.1 {
                (v - dof.limits.1).powi(2)
            } else if v < dof.limits.0 {
                (dof.limits.0 - v).powi(2)
            } else {
                0.0
            }
        })
        .sum())
}

fn e_lim_gradient(pose: &Pose, model: &SkeletonModel) -> DVector<f64> {
    DVector::from_iterator(
        pose.len(),
        pose.theta.iter().zip(&model.dofs).map(|(&v, dof)| {
            if v > dof.limits.1 {
                2.0 * (v - dof.limits.1)
            } else if v < dof.limits.0 {
                2.0 * (v - dof.limits.0)
            } else {
                0.0
            }
        }),
    )
}

/// Evaluates the full objective `E_sim - w_l E_lim` with its analytic
/// gradient and per-camera diagnostics.
pub fn total_energy(
    pose: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &EnergyConfig,
) -> Result<EnergyReport> {
    let posed = pose_model(model, pose)?;
    let sim = e_sim_full(&posed, images, cfg, model.n_dofs(), true)?;
    let lim = e_lim(pose, model)?;
    let lim_grad = e_lim_gradient(pose, model);
    Ok(EnergyReport {
        value: sim.value - cfg.w_l * lim,
        gradient: sim.gradient - lim_grad * cfg.w_l,
        per_camera_sim: sim.per_camera,
        clamped_count: sim.clamped,
    })
}

/// Value-only evaluation of the full objective (used by line searches).
pub fn total_energy_value(
    pose: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &EnergyConfig,
) -> Result<f64> {
    let posed = pose_model(model, pose)?;
    let sim = e_sim_full(&posed, images, cfg, model.n_dofs(), false)?;
    Ok(sim.value - cfg.w_l * e_lim(pose, model)?)
}

/// Derivative of the overlap `D_pq` through the motion of the projected
/// model Gaussian `p`, with the image Gaussian `q` held fixed.
pub fn d_dpq(p: &Gaussian2D, dp: &ProjectionJacobian, q: &Gaussian2D) -> Result<f64> {
    let det_p = det2(&p.covariance);
    let det_q = det2(&q.covariance);
    let s = p.covariance + q.covariance;
    let det_s = det2(&s);
    if det_s <= 0.0 || det_p <= 0.0 {
        return Err(SagError::DegenerateCovariance(
            "singular covariance sum in overlap derivative".into(),
        ));
    }
    let inv_s = inv2(&s, det_s);
    let inv_p = inv2(&p.covariance, det_p);
    let delta = p.mean - q.mean;
    let u = inv_s * delta;
    let quad = u.dot(&delta);
    let d = 2.0 * std::f64::consts::PI * (det_p * det_q / det_s).sqrt() * (-0.5 * quad).exp();
    let t1 = 0.5 * trace_sym_product(&inv_p, &dp.dsigma);
    let t2 = 0.5 * trace_sym_product(&inv_s, &dp.dsigma);
    let t3 = dp.dmu.dot(&u);
    let t4 = 0.5
        * (u.x * u.x * dp.dsigma.m11 + 2.0 * u.x * u.y * dp.dsigma.m12 + u.y * u.y * dp.dsigma.m22);
    Ok(d * (t1 - t2 - t3 + t4))
}
