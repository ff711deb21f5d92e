//! Tracker-level behavior against synthetic ground truth.

mod common;

use common::{gaussian_center_error, skin, standard_rig};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use sagtrack_core::calibrate::{
    apply_shape, calibrate_model, CalibrationConfig, CalibrationFrame, ShapeParams,
};
use sagtrack_core::energy::{total_energy_value, EnergyConfig};
use sagtrack_core::hand::default_hand_model;
use sagtrack_core::kinematics::Pose;
use sagtrack_core::synth::{synth_render, NoiseConfig, SyntheticScene};
use sagtrack_core::tracker::{
    optimize_pose, optimize_pose_detailed, track_sequence, OptimizerConfig, TrackerConfig,
};

fn hand_scene(trajectory: Vec<Pose>, noise: Option<NoiseConfig>, seed: u64) -> SyntheticScene {
    SyntheticScene {
        model: default_hand_model(),
        trajectory,
        cameras: standard_rig(5),
        noise,
        seed,
        subdivide: 6,
        balanced_caps: true,
    }
}

fn moderate_pose(rng: &mut impl Rng) -> Pose {
    let model = default_hand_model();
    let mut theta = DVector::zeros(model.n_dofs());
    for (j, dof) in model.dofs.iter().enumerate() {
        theta[j] = match dof.name.as_str() {
            "global_tx" | "global_ty" | "global_tz" => rng.random_range(-30.0..30.0),
            "global_rx" | "global_ry" | "global_rz" => rng.random_range(-0.3..0.3),
            _ => {
                let lo = dof.limits.0.max(-0.25);
                let hi = dof.limits.1.min(0.6);
                rng.random_range(lo..hi)
            }
        };
    }
    Pose { theta }
}

fn perturb(truth: &Pose, rng: &mut impl Rng) -> Pose {
    let model = default_hand_model();
    let mut theta = truth.theta.clone();
    // translation offset of magnitude <= 10 mm
    let dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    let t = dir * rng.random_range(0.0..10.0);
    theta[0] += t.x;
    theta[1] += t.y;
    theta[2] += t.z;
    let five_deg = 5.0f64.to_radians();
    for j in 3..model.n_dofs() {
        theta[j] += rng.random_range(-five_deg..five_deg);
    }
    Pose { theta }
}

#[test]
fn perturbed_pose_recovers_below_one_millimeter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let model = default_hand_model();
    let ocfg = OptimizerConfig::default();
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let truth = moderate_pose(&mut rng);
        let scene = hand_scene(vec![truth.clone()], None, 50 + trial);
        let frame = synth_render(&scene, 0).unwrap();
        let ecfg = EnergyConfig::new(scene.cameras.clone());
        let start = perturb(&truth, &mut rng);
        let recovered = optimize_pose(&start, &model, &frame.images, &ocfg, &ecfg).unwrap();
        let before = gaussian_center_error(&model, &start, &truth);
        let after = gaussian_center_error(&model, &recovered, &truth);
        assert!(
            after < 1.0,
            "trial {trial}: error {after:.3} mm (started at {before:.3} mm)"
        );
        worst = worst.max(after);
    }
    println!("worst recovery error over 10 trials: {worst:.4} mm");
}

#[test]
fn optimizer_is_monotone_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let model = default_hand_model();
    let ocfg = OptimizerConfig::default();
    for trial in 0..100 {
        let truth = moderate_pose(&mut rng);
        let scene = hand_scene(
            vec![truth.clone()],
            Some(NoiseConfig {
                mean_jitter_px: 1.5,
                color_jitter: 0.01,
                dropout: 0.1,
            }),
            900 + trial,
        );
        let frame = synth_render(&scene, 0).unwrap();
        let ecfg = EnergyConfig::new(scene.cameras.clone());
        let start = perturb(&truth, &mut rng);
        let v0 = total_energy_value(&start, &model, &frame.images, &ecfg).unwrap();
        let out =
            optimize_pose_detailed(&start, &model, &frame.images, &ocfg, &ecfg).unwrap();
        assert!(
            out.energy >= v0 - 1e-9 * v0.abs(),
            "trial {trial}: energy decreased from {v0} to {}",
            out.energy
        );
    }
}

#[test]
fn static_scene_tracks_to_identical_poses() {
    let model = default_hand_model();
    let rest = Pose::zeros(model.n_dofs());
    let scene = hand_scene(vec![rest.clone(); 10], None, 3);
    let frames: Vec<_> = (0..10)
        .map(|f| synth_render(&scene, f).unwrap().images)
        .collect();
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let out = track_sequence(
        &model,
        &frames,
        &rest,
        &OptimizerConfig::default(),
        &ecfg,
        &TrackerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.poses.len(), 10);
    for (i, pose) in out.poses.iter().enumerate() {
        let d = (&pose.theta - &out.poses[0].theta).amax();
        assert!(d < 1e-6, "frame {i} drifted by {d}");
    }
}

#[test]
fn linear_motion_stays_within_two_millimeters() {
    let model = default_hand_model();
    let n = 12;
    let trajectory: Vec<Pose> = (0..n)
        .map(|f| {
            let t = f as f64 / (n - 1) as f64;
            let mut theta = DVector::zeros(model.n_dofs());
            theta[0] = 25.0 * t; // drift sideways
            theta[5] = 0.25 * t; // slow wrist roll
            for j in [7usize, 11, 15, 19, 23] {
                theta[j] = 0.5 * t; // slow curl of every finger's base joint
            }
            Pose { theta }
        })
        .collect();
    let scene = hand_scene(trajectory.clone(), None, 11);
    let frames: Vec<_> = (0..n)
        .map(|f| synth_render(&scene, f).unwrap().images)
        .collect();
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let out = track_sequence(
        &model,
        &frames,
        &trajectory[0],
        &OptimizerConfig::default(),
        &ecfg,
        &TrackerConfig::default(),
    )
    .unwrap();
    for (f, (tracked, truth)) in out.poses.iter().zip(&trajectory).enumerate() {
        let err = gaussian_center_error(&model, tracked, truth);
        assert!(err < 2.0, "frame {f}: error {err:.3} mm");
    }
}

#[test]
fn single_frame_sequence_equals_one_optimization() {
    let model = default_hand_model();
    let rest = Pose::zeros(model.n_dofs());
    let scene = hand_scene(vec![rest.clone()], None, 21);
    let images = synth_render(&scene, 0).unwrap().images;
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let ocfg = OptimizerConfig::default();
    let direct = optimize_pose(&rest, &model, &images, &ocfg, &ecfg).unwrap();
    let out = track_sequence(
        &model,
        std::slice::from_ref(&images),
        &rest,
        &ocfg,
        &ecfg,
        &TrackerConfig::default(),
    )
    .unwrap();
    assert_eq!(out.poses.len(), 1);
    assert_eq!(out.poses[0], direct);
}

#[test]
fn ground_truth_is_a_local_maximum_of_the_synthetic_energy() {
    // probe 100 random pose rays around the truth; the energy at the truth
    // must be within 1% of the best sampled value along each ray
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let model = default_hand_model();
    let truth = Pose::zeros(model.n_dofs());
    let scene = hand_scene(vec![truth.clone()], None, 31);
    let frame = synth_render(&scene, 0).unwrap();
    let mut ecfg = EnergyConfig::new(scene.cameras.clone());
    ecfg.w_l = 0.0;
    let e_truth = total_energy_value(&truth, &model, &frame.images, &ecfg).unwrap();
    for ray in 0..100 {
        let dir = DVector::from_fn(model.n_dofs(), |j, _| {
            let scale = if j < 3 { 8.0 } else { 0.12 };
            rng.random_range(-1.0..1.0) * scale
        });
        let mut best_along_ray = f64::NEG_INFINITY;
        for step in 1..=8 {
            let t = step as f64 / 8.0;
            let pose = Pose {
                theta: &truth.theta + &dir * t,
            };
            let v = total_energy_value(&pose, &model, &frame.images, &ecfg).unwrap();
            best_along_ray = best_along_ray.max(v);
        }
        assert!(
            e_truth >= best_along_ray * 0.99,
            "ray {ray}: truth energy {e_truth} below 1% of ray max {best_along_ray}"
        );
    }
}

#[test]
fn full_dropout_reports_loss_of_track() {
    let model = default_hand_model();
    let rest = Pose::zeros(model.n_dofs());
    let mut scene = hand_scene(vec![rest.clone(); 4], None, 41);
    let mut frames: Vec<_> = (0..3)
        .map(|f| synth_render(&scene, f).unwrap().images)
        .collect();
    scene.noise = Some(NoiseConfig {
        mean_jitter_px: 0.0,
        color_jitter: 0.0,
        dropout: 1.0,
    });
    let empty = synth_render(&scene, 3).unwrap().images;
    assert!(empty.iter().all(|s| s.is_empty()));
    frames.push(empty);
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let out = track_sequence(
        &model,
        &frames,
        &rest,
        &OptimizerConfig::default(),
        &ecfg,
        &TrackerConfig::default(),
    )
    .unwrap();
    assert!(!out.frames[2].lost_track);
    assert!(out.frames[3].lost_track, "empty frame not flagged as lost");
}

#[test]
fn calibration_recovers_an_inflated_axis() {
    // target images come from a copy of the hand whose index proximal
    // Gaussian is 1.3x longer along its main axis; calibrating the base
    // model against them must recover that scale within 10%
    let base = default_hand_model();
    let target_gaussian = 5; // index finger proximal phalanx
    let mut params = ShapeParams::identity(base.gaussians.len());
    params.per_gaussian[target_gaussian] = [1.3, 1.0, 1.0];
    let target = apply_shape(&base, &params).unwrap();

    let poses = vec![Pose::zeros(base.n_dofs()); 2];
    let scene = SyntheticScene {
        model: target.clone(),
        trajectory: poses.clone(),
        cameras: standard_rig(5),
        noise: None,
        seed: 17,
        subdivide: 6,
        balanced_caps: true,
    };
    let frames: Vec<CalibrationFrame> = (0..2)
        .map(|f| (poses[f].clone(), synth_render(&scene, f).unwrap().images))
        .collect();
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let calibrated = calibrate_model(&base, &frames, &CalibrationConfig::default(), &ecfg)
        .unwrap();

    let long_axis = |m: &sagtrack_core::kinematics::SkeletonModel| {
        m.gaussians[target_gaussian]
            .covariance
            .symmetric_eigenvalues()
            .max()
            .sqrt()
    };
    let recovered_scale = long_axis(&calibrated) / long_axis(&base);
    assert!(
        (recovered_scale - 1.3).abs() <= 0.13,
        "recovered axis scale {recovered_scale:.3}, wanted 1.3 +/- 10%"
    );
}

#[test]
fn calibration_objective_never_decreases() {
    let base = default_hand_model();
    let mut params = ShapeParams::identity(base.gaussians.len());
    params.global_scale = 1.15;
    let target = apply_shape(&base, &params).unwrap();
    let pose = Pose::zeros(base.n_dofs());
    let scene = SyntheticScene {
        model: target,
        trajectory: vec![pose.clone()],
        cameras: standard_rig(3),
        noise: None,
        seed: 23,
        subdivide: 6,
        balanced_caps: true,
    };
    let frames: Vec<CalibrationFrame> =
        vec![(pose.clone(), synth_render(&scene, 0).unwrap().images)];
    let ecfg = EnergyConfig::new(scene.cameras.clone());
    let before: f64 = frames
        .iter()
        .map(|(p, imgs)| total_energy_value(p, &base, imgs, &ecfg).unwrap())
        .sum();
    let calibrated =
        calibrate_model(&base, &frames, &CalibrationConfig::default(), &ecfg).unwrap();
    let after: f64 = frames
        .iter()
        .map(|(p, imgs)| total_energy_value(p, &calibrated, imgs, &ecfg).unwrap())
        .sum();
    assert!(after >= before, "calibration made the fit worse");
}

#[test]
fn sign_adaptive_rule_is_also_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let model = default_hand_model();
    let ocfg = OptimizerConfig {
        rule: sagtrack_core::tracker::StepRule::SignAdaptive,
        ..OptimizerConfig::default()
    };
    for trial in 0..10 {
        let truth = moderate_pose(&mut rng);
        let scene = hand_scene(vec![truth.clone()], None, 600 + trial);
        let frame = synth_render(&scene, 0).unwrap();
        let ecfg = EnergyConfig::new(scene.cameras.clone());
        let start = perturb(&truth, &mut rng);
        let v0 = total_energy_value(&start, &model, &frame.images, &ecfg).unwrap();
        let out =
            optimize_pose_detailed(&start, &model, &frame.images, &ocfg, &ecfg).unwrap();
        assert!(out.energy >= v0);
    }
}

#[test]
fn avoid_unused_helpers() {
    let _ = skin();
    let _ = Matrix3::<f64>::identity();
}
