//! Built-in 26-DOF hand rig with 17 anisotropic Gaussians.
//!
//! Conventions: the palm lies in the local x/y plane with fingers along +y
//! and the palm normal along +z; units are millimeters. The root carries 3
//! world-translation DOFs and 3 revolute DOFs; each finger has two DOFs at
//! the base joint (abduction about z, flexion about x) and one flexion DOF at
//! each of the two distal joints. Each phalanx carries one elongated
//! Gaussian whose 1-sigma surface spans the phalanx; the palm carries two.
//!
//! The DOF allocation and limit values are a rig convention of this crate,
//! shipped as data in the model file format so they can be edited without
//! touching code.

use nalgebra::{Matrix3, Vector3};

use crate::kinematics::{Bone, Dof, DofKind, Landmark, ModelGaussian, SkeletonModel};

struct FingerSpec {
    name: &'static str,
    base: Vector3<f64>,
    /// rest rotation angle about z at the base joint
    splay: f64,
    lengths: [f64; 3],
    radius: f64,
    hue: f64,
}

const FINGERS: [FingerSpec; 5] = [
    FingerSpec {
        name: "thumb",
        base: Vector3::new(-42.0, 10.0, 0.0),
        splay: 0.85,
        lengths: [42.0, 32.0, 26.0],
        radius: 9.0,
        hue: 0.075,
    },
    FingerSpec {
        name: "index",
        base: Vector3::new(-27.0, 80.0, 0.0),
        splay: 0.06,
        lengths: [45.0, 27.0, 22.0],
        radius: 7.5,
        hue: 0.068,
    },
    FingerSpec {
        name: "middle",
        base: Vector3::new(-9.0, 84.0, 0.0),
        splay: 0.0,
        lengths: [50.0, 30.0, 24.0],
        radius: 7.5,
        hue: 0.065,
    },
    FingerSpec {
        name: "ring",
        base: Vector3::new(9.0, 82.0, 0.0),
        splay: -0.05,
        lengths: [46.0, 28.0, 23.0],
        radius: 7.0,
        hue: 0.062,
    },
    FingerSpec {
        name: "pinky",
        base: Vector3::new(27.0, 76.0, 0.0),
        splay: -0.12,
        lengths: [36.0, 22.0, 20.0],
        radius: 6.0,
        hue: 0.07,
    },
];

fn rot_z(a: f64) -> Matrix3<f64> {
    Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
}

fn phalanx_gaussian(bone: usize, length: f64, radius: f64, hue: f64) -> ModelGaussian {
    let half = length / 2.0;
    ModelGaussian {
        bone,
        mean: Vector3::new(0.0, half, 0.0),
        covariance: Matrix3::from_diagonal(&Vector3::new(
            radius * radius,
            half * half,
            radius * radius,
        )),
        color: Vector3::new(hue, 0.45, 0.85),
        weight: 1.0,
    }
}

/// Builds the default hand model: 26 DOFs, 17 Gaussians, 5 fingertip
/// landmarks. The canonical on-disk copy lives in `assets/hand_default.txt`.
pub fn default_hand_model() -> SkeletonModel {
    let mut bones = vec![Bone {
        name: "palm".into(),
        parent: None,
        offset: Vector3::zeros(),
        rest_rotation: Matrix3::identity(),
    }];
    let mut dofs = Vec::with_capacity(26);
    let mut gaussians = Vec::with_capacity(17);
    let mut landmarks = Vec::with_capacity(5);

    for (name, axis) in [("tx", Vector3::x()), ("ty", Vector3::y()), ("tz", Vector3::z())] {
        dofs.push(Dof {
            name: format!("global_{name}"),
            bone: 0,
            kind: DofKind::GlobalTranslation,
            axis,
            limits: (-500.0, 500.0),
        });
    }
    for (name, axis) in [("rx", Vector3::x()), ("ry", Vector3::y()), ("rz", Vector3::z())] {
        dofs.push(Dof {
            name: format!("global_{name}"),
            bone: 0,
            kind: DofKind::Revolute,
            axis,
            limits: (-3.15, 3.15),
        });
    }

    gaussians.push(ModelGaussian {
        bone: 0,
        mean: Vector3::new(0.0, 28.0, 0.0),
        covariance: Matrix3::from_diagonal(&Vector3::new(26.0 * 26.0, 24.0 * 24.0, 81.0)),
        color: Vector3::new(0.06, 0.42, 0.82),
        weight: 1.0,
    });
    gaussians.push(ModelGaussian {
        bone: 0,
        mean: Vector3::new(0.0, 60.0, 0.0),
        covariance: Matrix3::from_diagonal(&Vector3::new(30.0 * 30.0, 22.0 * 22.0, 81.0)),
        color: Vector3::new(0.06, 0.44, 0.84),
        weight: 1.0,
    });

    for finger in &FINGERS {
        let is_thumb = finger.name == "thumb";
        let proximal = bones.len();
        bones.push(Bone {
            name: format!("{}_proximal", finger.name),
            parent: Some(0),
            offset: finger.base,
            rest_rotation: rot_z(finger.splay),
        });
        let middle = bones.len();
        bones.push(Bone {
            name: format!("{}_middle", finger.name),
            parent: Some(proximal),
            offset: Vector3::new(0.0, finger.lengths[0], 0.0),
            rest_rotation: Matrix3::identity(),
        });
        let distal = bones.len();
        bones.push(Bone {
            name: format!("{}_distal", finger.name),
            parent: Some(middle),
            offset: Vector3::new(0.0, finger.lengths[1], 0.0),
            rest_rotation: Matrix3::identity(),
        });

        let (abd, mcp, pip, dip) = if is_thumb {
            ((-0.6, 0.6), (-0.5, 1.2), (-0.3, 1.3), (-0.3, 1.4))
        } else {
            ((-0.35, 0.35), (-0.3, 1.6), (-0.1, 1.9), (-0.1, 1.5))
        };
        dofs.push(Dof {
            name: format!("{}_abduct", finger.name),
            bone: proximal,
            kind: DofKind::Revolute,
            axis: Vector3::z(),
            limits: abd,
        });
        dofs.push(Dof {
            name: format!("{}_mcp", finger.name),
            bone: proximal,
            kind: DofKind::Revolute,
            axis: Vector3::x(),
            limits: mcp,
        });
        dofs.push(Dof {
            name: format!("{}_pip", finger.name),
            bone: middle,
            kind: DofKind::Revolute,
            axis: Vector3::x(),
            limits: pip,
        });
        dofs.push(Dof {
            name: format!("{}_dip", finger.name),
            bone: distal,
            kind: DofKind::Revolute,
            axis: Vector3::x(),
            limits: dip,
        });

        let r = finger.radius;
        gaussians.push(phalanx_gaussian(proximal, finger.lengths[0], r, finger.hue));
        gaussians.push(phalanx_gaussian(middle, finger.lengths[1], r * 0.9, finger.hue + 0.004));
        gaussians.push(phalanx_gaussian(distal, finger.lengths[2], r * 0.8, finger.hue + 0.008));

        landmarks.push(Landmark {
            name: format!("{}_tip", finger.name),
            bone: distal,
            offset: Vector3::new(0.0, finger.lengths[2], 0.0),
        });
    }

    let model = SkeletonModel {
        bones,
        dofs,
        gaussians,
        landmarks,
    };
    debug_assert!(model.validate().is_ok());
    model
}
