//! Kinematic skeleton, forward kinematics and analytic pose Jacobians.
//!
//! A model is a tree of bones; each bone carries a fixed local offset and
//! rest rotation relative to its parent, plus an ordered subset of the
//! model's DOFs. A bone's world transform is
//!
//! ```text
//! world(bone) = world(parent) . Trans(offset) . Rot(rest) . D_1 . D_2 ...
//! ```
//!
//! with the DOF transforms applied in declaration order. Gaussians are
//! attached to bones and move rigidly with them.
//!
//! Pose Jacobians are geometric: perturbing a revolute DOF with current world
//! axis `w` through pivot `p` moves a downstream point `mu` by
//! `dmu = w x (mu - p)` and a downstream covariance by
//! `dSigma = [w]x Sigma + Sigma [w]x^T`; translational DOFs move points along
//! their axis and leave covariances untouched. Jacobians are stored sparsely
//! over the DOFs on the chain from the root to the Gaussian's bone.

use nalgebra::{DVector, Matrix3, Unit, Vector3};

use crate::error::{Result, SagError};
use crate::gaussian::{invert_spd3, transform_gaussian3d, Gaussian3D};

/// How a DOF moves its bone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    /// Rotation about a fixed axis of the bone's current local frame.
    Revolute,
    /// Translation along a fixed axis of the bone's current local frame.
    Prismatic,
    /// Translation along a fixed world axis (root positioning).
    GlobalTranslation,
}

/// One bone of the skeleton tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    /// Parent bone index; `None` for the single root.
    pub parent: Option<usize>,
    /// Offset from the parent frame origin, in the parent frame.
    pub offset: Vector3<f64>,
    /// Rest rotation applied after the offset.
    pub rest_rotation: Matrix3<f64>,
}

/// One scalar degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct Dof {
    pub name: String,
    pub bone: usize,
    pub kind: DofKind,
    /// Unit axis of motion (local frame, or world frame for
    /// [`DofKind::GlobalTranslation`]).
    pub axis: Vector3<f64>,
    /// Anatomical motion range `[lower, upper]`.
    pub limits: (f64, f64),
}

/// A Gaussian blob rigged to a bone, in the bone's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGaussian {
    pub bone: usize,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub color: Vector3<f64>,
    pub weight: f64,
}

/// A named evaluation site rigged to a bone (e.g. a fingertip).
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub name: String,
    pub bone: usize,
    pub offset: Vector3<f64>,
}

/// The full rigged model.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    pub bones: Vec<Bone>,
    pub dofs: Vec<Dof>,
    pub gaussians: Vec<ModelGaussian>,
    pub landmarks: Vec<Landmark>,
}

/// The pose vector Theta: one value per DOF, radians for revolute DOFs and
/// world units for translational ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub theta: DVector<f64>,
}

impl Pose {
    pub fn zeros(n: usize) -> Self {
        Self {
            theta: DVector::zeros(n),
        }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self {
            theta: DVector::from_vec(v),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.len() == 0
    }
}

impl SkeletonModel {
    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bones.is_empty() {
            return Err(SagError::InvalidInput("model has no bones".into()));
        }
        let mut roots = 0usize;
        for (i, bone) in self.bones.iter().enumerate() {
            match bone.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(SagError::InvalidInput(format!(
                        "bone {} must come after its parent",
                        bone.name
                    )))
                }
                Some(_) => {}
            }
            let dev = (bone.rest_rotation.transpose() * bone.rest_rotation
                - Matrix3::identity())
            .norm();
            if dev > 1e-9 {
                return Err(SagError::InvalidTransform { deviation: dev });
            }
        }
        if roots != 1 {
            return Err(SagError::InvalidInput(format!(
                "model must have exactly one root bone, found {roots}"
            )));
        }
        for dof in &self.dofs {
            if dof.bone >= self.bones.len() {
                return Err(SagError::InvalidInput(format!(
                    "dof {} references missing bone {}",
                    dof.name, dof.bone
                )));
            }
            if !(dof.limits.0 < dof.limits.1) {
                return Err(SagError::InvalidInput(format!(
                    "dof {} has empty limit range [{}, {}]",
                    dof.name, dof.limits.0, dof.limits.1
                )));
            }
            if dof.axis.norm() < 1e-9 {
                return Err(SagError::InvalidInput(format!(
                    "dof {} has a zero axis",
                    dof.name
                )));
            }
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.bone >= self.bones.len() {
                return Err(SagError::InvalidInput(format!(
                    "gaussian {i} references missing bone {}",
                    g.bone
                )));
            }
            invert_spd3(&g.covariance)?;
        }
        for lm in &self.landmarks {
            if lm.bone >= self.bones.len() {
                return Err(SagError::InvalidInput(format!(
                    "landmark {} references missing bone {}",
                    lm.name, lm.bone
                )));
            }
        }
        Ok(())
    }

    fn check_pose(&self, pose: &Pose) -> Result<()> {
        if pose.len() != self.dofs.len() {
            return Err(SagError::InvalidPose {
                expected: self.dofs.len(),
                got: pose.len(),
            });
        }
        Ok(())
    }

    /// DOF indices on the chain from the root to each bone, in declaration
    /// order (ancestors first).
    pub fn dof_chains(&self) -> Vec<Vec<usize>> {
        let mut per_bone: Vec<Vec<usize>> = vec![Vec::new(); self.bones.len()];
        for (j, dof) in self.dofs.iter().enumerate() {
            per_bone[dof.bone].push(j);
        }
        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(self.bones.len());
        for (b, bone) in self.bones.iter().enumerate() {
            let mut chain = match bone.parent {
                Some(p) => chains[p].clone(),
                None => Vec::new(),
            };
            chain.extend_from_slice(&per_bone[b]);
            chains.push(chain);
        }
        chains
    }
}

/// Rigid world transforms of every bone plus the world axis and pivot of
/// every DOF at the given pose.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub bone_rotations: Vec<Matrix3<f64>>,
    pub bone_translations: Vec<Vector3<f64>>,
    /// World-frame motion axis of each DOF.
    pub dof_axes: Vec<Vector3<f64>>,
    /// World point the DOF rotates about (unused for translational DOFs).
    pub dof_pivots: Vec<Vector3<f64>>,
}

/// Computes world transforms for all bones.
pub fn forward_kinematics(model: &SkeletonModel, pose: &Pose) -> Result<FkResult> {
    model.check_pose(pose)?;
    let n_bones = model.bones.len();
    let mut rots: Vec<Matrix3<f64>> = Vec::with_capacity(n_bones);
    let mut trans: Vec<Vector3<f64>> = Vec::with_capacity(n_bones);
    let mut dof_axes = vec![Vector3::zeros(); model.dofs.len()];
    let mut dof_pivots = vec![Vector3::zeros(); model.dofs.len()];

    let mut per_bone: Vec<Vec<usize>> = vec![Vec::new(); n_bones];
    for (j, dof) in model.dofs.iter().enumerate() {
        per_bone[dof.bone].push(j);
    }

    for (b, bone) in model.bones.iter().enumerate() {
        let (mut r, mut t) = match bone.parent {
            Some(p) => (rots[p], trans[p]),
            None => (Matrix3::identity(), Vector3::zeros()),
        };
        t += r * bone.offset;
        r *= bone.rest_rotation;
        for &j in &per_bone[b] {
            let dof = &model.dofs[j];
            let theta = pose.theta[j];
            match dof.kind {
                DofKind::GlobalTranslation => {
                    let axis = dof.axis.normalize();
                    dof_axes[j] = axis;
                    dof_pivots[j] = t;
                    t += axis * theta;
                }
                DofKind::Prismatic => {
                    let axis = r * dof.axis.normalize();
                    dof_axes[j] = axis;
                    dof_pivots[j] = t;
                    t += axis * theta;
                }
                DofKind::Revolute => {
                    let axis_local = Unit::new_normalize(dof.axis);
                    dof_axes[j] = r * axis_local.into_inner();
                    dof_pivots[j] = t;
                    r *= nalgebra::Rotation3::from_axis_angle(&axis_local, theta).into_inner();
                }
            }
        }
        rots.push(r);
        trans.push(t);
    }
    Ok(FkResult {
        bone_rotations: rots,
        bone_translations: trans,
        dof_axes,
        dof_pivots,
    })
}

/// Jacobian of one posed Gaussian with respect to one DOF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofJacobian {
    pub dof: usize,
    /// d mu / d theta in world coordinates.
    pub dmu: Vector3<f64>,
    /// d Sigma^-1 / d theta in world coordinates (symmetric).
    pub dsigma_inv: Matrix3<f64>,
}

/// A model Gaussian placed in world space with its sparse pose Jacobians.
#[derive(Debug, Clone)]
pub struct PosedGaussian {
    pub world: Gaussian3D,
    /// Cached inverse of the world covariance.
    pub sigma_inv: Matrix3<f64>,
    /// One entry per DOF on the chain from the root to this Gaussian's bone.
    pub jacobians: Vec<DofJacobian>,
}

/// All model Gaussians posed into world space.
#[derive(Debug, Clone)]
pub struct PosedGaussians {
    pub items: Vec<PosedGaussian>,
}

#[inline]
fn cross_matrix(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Poses every model Gaussian and assembles its analytic pose Jacobians.
pub fn pose_model(model: &SkeletonModel, pose: &Pose) -> Result<PosedGaussians> {
    let fk = forward_kinematics(model, pose)?;
    let chains = model.dof_chains();
    let mut items = Vec::with_capacity(model.gaussians.len());
    for g in &model.gaussians {
        let r = &fk.bone_rotations[g.bone];
        let t = &fk.bone_translations[g.bone];
        let local = Gaussian3D {
            mean: g.mean,
            covariance: g.covariance,
            color: g.color,
            weight: g.weight,
        };
        let world = transform_gaussian3d(&local, r, t)?;
        let sigma_inv = invert_spd3(&world.covariance)?;
        let mut jacobians = Vec::with_capacity(chains[g.bone].len());
        for &j in &chains[g.bone] {
            let dof = &model.dofs[j];
            let (dmu, dsigma_inv) = match dof.kind {
                DofKind::GlobalTranslation | DofKind::Prismatic => {
                    (fk.dof_axes[j], Matrix3::zeros())
                }
                DofKind::Revolute => {
                    let w = fk.dof_axes[j];
                    let dmu = w.cross(&(world.mean - fk.dof_pivots[j]));
                    let wx = cross_matrix(&w);
                    let dsigma = wx * world.covariance + world.covariance * wx.transpose();
                    let dsigma_inv = -(sigma_inv * dsigma * sigma_inv);
                    (dmu, dsigma_inv)
                }
            };
            jacobians.push(DofJacobian {
                dof: j,
                dmu,
                dsigma_inv,
            });
        }
        items.push(PosedGaussian {
            world,
            sigma_inv,
            jacobians,
        });
    }
    Ok(PosedGaussians { items })
}

/// Componentwise clamp of a pose to the model's DOF limits.
pub fn clamp_pose(model: &SkeletonModel, pose: &Pose) -> Result<Pose> {
    model.check_pose(pose)?;
    let theta = DVector::from_iterator(
        pose.len(),
        pose.theta
            .iter()
            .zip(&model.dofs)
            .map(|(&v, dof)| v.clamp(dof.limits.0, dof.limits.1)),
    );
    Ok(Pose { theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn skin() -> Vector3<f64> {
        Vector3::new(0.07, 0.45, 0.85)
    }

    /// root (revolute z) -> link (offset (1,0,0), revolute z) -> tip gaussian
    fn two_link() -> SkeletonModel {
        SkeletonModel {
            bones: vec![
                Bone {
                    name: "root".into(),
                    parent: None,
                    offset: Vector3::zeros(),
                    rest_rotation: Matrix3::identity(),
                },
                Bone {
                    name: "link".into(),
                    parent: Some(0),
                    offset: Vector3::new(1.0, 0.0, 0.0),
                    rest_rotation: Matrix3::identity(),
                },
            ],
            dofs: vec![
                Dof {
                    name: "root_rz".into(),
                    bone: 0,
                    kind: DofKind::Revolute,
                    axis: Vector3::z(),
                    limits: (-3.2, 3.2),
                },
                Dof {
                    name: "link_rz".into(),
                    bone: 1,
                    kind: DofKind::Revolute,
                    axis: Vector3::z(),
                    limits: (-3.2, 3.2),
                },
            ],
            gaussians: vec![ModelGaussian {
                bone: 1,
                mean: Vector3::new(0.5, 0.0, 0.0),
                covariance: Matrix3::from_diagonal(&Vector3::new(0.25, 0.04, 0.04)),
                color: skin(),
                weight: 1.0,
            }],
            landmarks: vec![],
        }
    }

    #[test]
    fn zero_pose_is_rest_configuration() {
        let model = two_link();
        let fk = forward_kinematics(&model, &Pose::zeros(2)).unwrap();
        assert_eq!(fk.bone_translations[0], Vector3::zeros());
        assert_eq!(fk.bone_translations[1], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(fk.bone_rotations[1], Matrix3::identity());
    }

    #[test]
    fn root_quarter_turn_moves_child() {
        let model = two_link();
        let fk = forward_kinematics(&model, &Pose::from_vec(vec![FRAC_PI_2, 0.0])).unwrap();
        assert_relative_eq!(
            fk.bone_translations[1],
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn two_eighth_turns_compose_to_quarter() {
        let model = two_link();
        let chained =
            forward_kinematics(&model, &Pose::from_vec(vec![FRAC_PI_2 / 2.0, FRAC_PI_2 / 2.0]))
                .unwrap();
        let single = forward_kinematics(&model, &Pose::from_vec(vec![FRAC_PI_2, 0.0])).unwrap();
        assert_relative_eq!(
            chained.bone_rotations[1],
            single.bone_rotations[1],
            epsilon = 1e-14
        );
    }

    #[test]
    fn pose_length_mismatch_is_error() {
        let model = two_link();
        assert!(matches!(
            forward_kinematics(&model, &Pose::zeros(3)),
            Err(SagError::InvalidPose { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn translation_dof_jacobian_is_axis() {
        let mut model = two_link();
        model.dofs.insert(
            0,
            Dof {
                name: "tx".into(),
                bone: 0,
                kind: DofKind::GlobalTranslation,
                axis: Vector3::x(),
                limits: (-100.0, 100.0),
            },
        );
        let posed = pose_model(&model, &Pose::from_vec(vec![3.0, 0.4, -0.2])).unwrap();
        let jac = &posed.items[0].jacobians[0];
        assert_eq!(jac.dof, 0);
        assert_eq!(jac.dmu, Vector3::x());
        assert_eq!(jac.dsigma_inv, Matrix3::zeros());
    }

    #[test]
    fn chain_sparsity_is_exact() {
        // a second, independent branch off the root must not move when the
        // first branch's DOF changes
        let mut model = two_link();
        model.bones.push(Bone {
            name: "branch".into(),
            parent: Some(0),
            offset: Vector3::new(0.0, -1.0, 0.0),
            rest_rotation: Matrix3::identity(),
        });
        model.gaussians.push(ModelGaussian {
            bone: 2,
            mean: Vector3::new(0.1, 0.0, 0.0),
            covariance: Matrix3::from_diagonal_element(0.04),
            color: skin(),
            weight: 1.0,
        });
        let p0 = pose_model(&model, &Pose::from_vec(vec![0.3, 0.0])).unwrap();
        let p1 = pose_model(&model, &Pose::from_vec(vec![0.3, 0.9])).unwrap();
        // gaussian 1 sits on the branch bone: link_rz (dof 1) is off-chain
        assert_eq!(p0.items[1].world, p1.items[1].world);
        assert!(p0.items[1].jacobians.iter().all(|j| j.dof != 1));
    }

    #[test]
    fn fk_is_deterministic() {
        let model = crate::hand::default_hand_model();
        let mut pose = Pose::zeros(model.n_dofs());
        for (i, v) in pose.theta.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() * 0.2;
        }
        let a = pose_model(&model, &pose).unwrap();
        let b = pose_model(&model, &pose).unwrap();
        for (x, y) in a.items.iter().zip(&b.items) {
            assert_eq!(x.world, y.world);
            assert_eq!(x.jacobians.len(), y.jacobians.len());
            for (p, q) in x.jacobians.iter().zip(&y.jacobians) {
                assert_eq!(p.dmu, q.dmu);
                assert_eq!(p.dsigma_inv, q.dsigma_inv);
            }
        }
    }

    #[test]
    fn posed_covariances_stay_positive_definite() {
        let model = crate::hand::default_hand_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let pose = random_pose(&model, &mut rng);
            let posed = pose_model(&model, &pose).unwrap();
            for item in posed.items {
                let eig = item.world.covariance.symmetric_eigenvalues();
                assert!(eig.min() > 0.0);
            }
        }
    }

    #[test]
    fn clamp_pose_behaviour() {
        let model = two_link();
        let inside = Pose::from_vec(vec![0.5, -0.5]);
        assert_eq!(clamp_pose(&model, &inside).unwrap(), inside);
        let outside = Pose::from_vec(vec![4.2, -5.0]);
        let clamped = clamp_pose(&model, &outside).unwrap();
        assert_eq!(clamped.theta[0], 3.2);
        assert_eq!(clamped.theta[1], -3.2);
        let twice = clamp_pose(&model, &clamped).unwrap();
        assert_eq!(twice, clamped);
    }

    use crate::testutil::random_pose;

    #[test]
    fn pose_jacobians_match_finite_differences() {
        let model = crate::hand::default_hand_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let h = 1e-5;
        for trial in 0..20 {
            let pose = if trial == 0 {
                Pose::zeros(model.n_dofs())
            } else {
                random_pose(&model, &mut rng)
            };
            let posed = pose_model(&model, &pose).unwrap();
            for (gi, item) in posed.items.iter().enumerate() {
                for jac in &item.jacobians {
                    let mut plus = pose.clone();
                    plus.theta[jac.dof] += h;
                    let mut minus = pose.clone();
                    minus.theta[jac.dof] -= h;
                    let gp = pose_model(&model, &plus).unwrap();
                    let gm = pose_model(&model, &minus).unwrap();
                    let fd_mu =
                        (gp.items[gi].world.mean - gm.items[gi].world.mean) / (2.0 * h);
                    let fd_w = (gp.items[gi].sigma_inv - gm.items[gi].sigma_inv) / (2.0 * h);
                    let mu_scale = jac.dmu.norm().max(fd_mu.norm()).max(1e-9);
                    assert!(
                        (jac.dmu - fd_mu).norm() / mu_scale < 1e-6,
                        "dmu mismatch at gaussian {gi} dof {}",
                        jac.dof
                    );
                    let w_scale = jac.dsigma_inv.norm().max(fd_w.norm()).max(1e-9);
                    assert!(
                        (jac.dsigma_inv - fd_w).norm() / w_scale < 1e-6,
                        "dsigma_inv mismatch at gaussian {gi} dof {}",
                        jac.dof
                    );
                }
            }
        }
    }
}
