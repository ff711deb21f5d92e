//! Per-frame pose optimization and the sequence tracking loop.
//!
//! Poses are estimated by gradient ascent on the fitting energy with a
//! backtracking line search: a step is accepted only if it increases the
//! objective, so the optimizer is monotone and can never return a pose worse
//! than its initialization. Steps are preconditioned per DOF type (radians
//! move on a much finer scale than millimeters) and clamped to the model's
//! limits after every accepted step.
//!
//! Across frames the optimizer is initialized by linear extrapolation of the
//! two previous poses. If a frame's final energy collapses below a fraction
//! of the recent median, the tracker flags a loss of track and restarts the
//! next frame from the last pose without extrapolation.

use nalgebra::DVector;

use crate::energy::{total_energy, total_energy_value, EnergyConfig};
use crate::error::{Result, SagError};
use crate::imagesog::ImageSoG;
use crate::kinematics::{clamp_pose, DofKind, Pose, SkeletonModel};

/// Step acceptance strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Ascent along a quasi-Newton (L-BFGS) direction built from the
    /// iteration history, with a backtracking line search and monotone
    /// acceptance. Falls back to the preconditioned gradient whenever the
    /// history direction is not an ascent direction.
    #[default]
    LbfgsBacktracking,
    /// Plain gradient ascent with a backtracking line search along the
    /// preconditioned gradient.
    Backtracking,
    /// Per-DOF sign-based step adaptation (resilient-propagation style):
    /// steps grow while the gradient sign is stable and shrink on flips.
    SignAdaptive,
}

/// Gradient ascent parameters.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Maximum number of accepted ascent steps per frame.
    pub iterations: usize,
    /// Scale of the first trial step, in units of the per-DOF caps.
    pub initial_step: f64,
    /// Line search backtracking factor in (0, 1).
    pub shrink: f64,
    /// Warm-start growth factor applied to the last accepted step size.
    pub grow: f64,
    /// Maximum backtracking halvings per iteration.
    pub max_backtracks: usize,
    /// Convergence threshold on the accepted step norm.
    pub epsilon: f64,
    /// Preconditioner for revolute DOFs (radians).
    pub rotation_scale: f64,
    /// Preconditioner for translational DOFs (world units); roughly the
    /// squared lever arm that converts angular to linear sensitivity.
    pub translation_scale: f64,
    /// Largest per-step change of a revolute DOF at `initial_step = 1`.
    pub rotation_cap: f64,
    /// Largest per-step change of a translational DOF at `initial_step = 1`.
    pub translation_cap: f64,
    pub rule: StepRule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            initial_step: 1.0,
            shrink: 0.5,
            grow: 2.0,
            max_backtracks: 12,
            epsilon: 1e-7,
            rotation_scale: 1.0,
            translation_scale: 2500.0,
            rotation_cap: 0.10,
            translation_cap: 5.0,
            rule: StepRule::Backtracking,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(SagError::InvalidInput("iterations must be >= 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(SagError::InvalidInput(format!(
                "shrink factor must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        Ok(())
    }
}

fn dof_scale(kind: DofKind, cfg: &OptimizerConfig) -> (f64, f64) {
    match kind {
        DofKind::Revolute => (cfg.rotation_scale, cfg.rotation_cap),
        DofKind::Prismatic | DofKind::GlobalTranslation => {
            (cfg.translation_scale, cfg.translation_cap)
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub pose: Pose,
    /// Final objective value.
    pub energy: f64,
    /// Number of accepted ascent steps.
    pub accepted_steps: usize,
    /// Image Gaussians at their occlusion cap in the final evaluation.
    pub clamped_count: usize,
}

/// Maximizes the fitting energy from `start`, returning a pose whose energy
/// is never below the starting one.
pub fn optimize_pose(
    start: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &OptimizerConfig,
    ecfg: &EnergyConfig,
) -> Result<Pose> {
    Ok(optimize_pose_detailed(start, model, images, cfg, ecfg)?.pose)
}

/// [`optimize_pose`] with diagnostics.
pub fn optimize_pose_detailed(
    start: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &OptimizerConfig,
    ecfg: &EnergyConfig,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    match cfg.rule {
        StepRule::Backtracking => ascend_backtracking(start, model, images, cfg, ecfg),
        StepRule::SignAdaptive => ascend_sign_adaptive(start, model, images, cfg, ecfg),
    }
}

/// Bounded L-BFGS curvature history for the quasi-Newton direction.
struct AscentHistory {
    s: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    capacity: usize,
}

impl AscentHistory {
    fn new(capacity: usize) -> Self {
        Self {
            s: Vec::new(),
            y: Vec::new(),
            capacity,
        }
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        // require positive curvature of the minimized objective
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            if self.s.len() == self.capacity {
                self.s.remove(0);
                self.y.remove(0);
            }
            self.s.push(s);
            self.y.push(y);
        }
    }

    /// Two-loop recursion for the ascent direction `H g`, seeded with the
    /// per-DOF diagonal preconditioner.
    fn direction(&self, gradient: &DVector<f64>, precond: &DVector<f64>) -> DVector<f64> {
        // minimize phi = -E: q = grad phi = -g
        let mut q = -gradient;
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        let mut rho = vec![0.0; k];
        for i in (0..k).rev() {
            rho[i] = 1.0 / self.y[i].dot(&self.s[i]);
            alpha[i] = rho[i] * self.s[i].dot(&q);
            q.axpy(-alpha[i], &self.y[i], 1.0);
        }
        let gamma = if k > 0 {
            let y = &self.y[k - 1];
            let ydy: f64 = y
                .iter()
                .zip(precond.iter())
                .map(|(&yi, &p)| yi * yi * p)
                .sum();
            (self.s[k - 1].dot(y) / ydy).max(1e-12)
        } else {
            1.0
        };
        let mut r = DVector::from_iterator(
            q.len(),
            q.iter().zip(precond.iter()).map(|(&qi, &p)| qi * p * gamma),
        );
        for i in 0..k {
            let beta = rho[i] * self.y[i].dot(&r);
            r.axpy(alpha[i] - beta, &self.s[i], 1.0);
        }
        // r approximates H grad(phi); ascent on E steps along -r
        -r
    }
}

fn ascend_backtracking(
    start: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &OptimizerConfig,
    ecfg: &EnergyConfig,
    quasi_newton: bool,
) -> Result<OptimizeOutcome> {
    let mut pose = start.clone();
    let mut report = total_energy(&pose, model, images, ecfg)?;
    let mut best = report.value;
    let mut accepted_steps = 0usize;
    let mut carry: Option<f64> = None;
    let precond = DVector::from_iterator(
        pose.len(),
        model.dofs.iter().map(|dof| dof_scale(dof.kind, cfg).0),
    );
    let mut history = AscentHistory::new(8);

    for _ in 0..cfg.iterations {
        let fallback = || {
            DVector::from_iterator(
                pose.len(),
                report
                    .gradient
                    .iter()
                    .zip(precond.iter())
                    .map(|(&g, &p)| g * p),
            )
        };
        let direction = if quasi_newton {
            let d = history.direction(&report.gradient, &precond);
            if d.dot(&report.gradient) > 0.0 {
                d
            } else {
                fallback()
            }
        } else {
            fallback()
        };
        // first trial step: the fastest-moving DOF moves by its cap
        let mut denom: f64 = 0.0;
        for (d, dof) in direction.iter().zip(&model.dofs) {
            denom = denom.max(d.abs() / dof_scale(dof.kind, cfg).1);
        }
        if denom <= 1e-300 {
            break; // stationary point
        }
        let alpha_max = cfg.initial_step / denom;
        let mut alpha = match carry {
            Some(a) => (a * cfg.grow).min(alpha_max),
            None => alpha_max,
        };

        let try_step = |alpha: f64| -> Result<(Pose, f64)> {
            let candidate = clamp_pose(
                model,
                &Pose {
                    theta: &pose.theta + &direction * alpha,
                },
            )?;
            let value = total_energy_value(&candidate, model, images, ecfg)?;
            Ok((candidate, value))
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let (candidate, value) = try_step(alpha)?;
            if value > best {
                accepted = Some((candidate, value, alpha));
                break;
            }
            alpha *= cfg.shrink;
        }
        let Some((mut candidate, mut value, mut used_alpha)) = accepted else {
            break; // no improving step within the backtracking budget
        };
        // extend along the same direction while the energy keeps rising
        while used_alpha * cfg.grow <= 32.0 * alpha_max {
            let (next, v) = try_step(used_alpha * cfg.grow)?;
            if v <= value {
                break;
            }
            candidate = next;
            value = v;
            used_alpha *= cfg.grow;
        }
        let step_norm = (&candidate.theta - &pose.theta).norm();
        pose = candidate;
        best = value;
        carry = Some(used_alpha);
        accepted_steps += 1;
        if step_norm < cfg.epsilon {
            break;
        }
        report = total_energy(&pose, model, images, ecfg)?;
    }
    let final_report = total_energy(&pose, model, images, ecfg)?;
    Ok(OptimizeOutcome {
        pose,
        energy: final_report.value,
        accepted_steps,
        clamped_count: final_report.clamped_count,
    })
}

fn ascend_sign_adaptive(
    start: &Pose,
    model: &SkeletonModel,
    images: &[ImageSoG],
    cfg: &OptimizerConfig,
    ecfg: &EnergyConfig,
) -> Result<OptimizeOutcome> {
    let mut pose = start.clone();
    let mut report = total_energy(&pose, model, images, ecfg)?;
    let mut best = report.value;
    let mut accepted_steps = 0usize;
    let mut steps: Vec<f64> = model
        .dofs
        .iter()
        .map(|d| dof_scale(d.kind, cfg).1 * cfg.initial_step * 0.5)
        .collect();
    let mut prev_grad: Option<DVector<f64>> = None;

    for _ in 0..cfg.iterations {
        let grad_norm = report.gradient.amax();
        if grad_norm <= 1e-300 {
            break;
        }
        let candidate = clamp_pose(
            model,
            &Pose {
                theta: DVector::from_iterator(
                    pose.len(),
                    pose.theta
                        .iter()
                        .zip(report.gradient.iter())
                        .zip(&steps)
                        .map(|((&t, &g), &s)| if g == 0.0 { t } else { t + g.signum() * s }),
                ),
            },
        )?;
        let value = total_energy_value(&candidate, model, images, ecfg)?;
        if value > best {
            let step_norm = (&candidate.theta - &pose.theta).norm();
            pose = candidate;
            best = value;
            accepted_steps += 1;
            let new_report = total_energy(&pose, model, images, ecfg)?;
            if let Some(pg) = &prev_grad {
                for ((s, &g_new), &g_old) in
                    steps.iter_mut().zip(new_report.gradient.iter()).zip(pg.iter())
                {
                    if g_new * g_old < 0.0 {
                        *s *= cfg.shrink;
                    } else {
                        *s *= 1.2;
                    }
                }
            }
            for (s, dof) in steps.iter_mut().zip(&model.dofs) {
                *s = s.min(dof_scale(dof.kind, cfg).1);
            }
            prev_grad = Some(report.gradient.clone());
            report = new_report;
            if step_norm < cfg.epsilon {
                break;
            }
        } else {
            for s in &mut steps {
                *s *= cfg.shrink;
            }
            if steps.iter().all(|&s| s < 1e-12) {
                break;
            }
        }
    }
    let final_report = total_energy(&pose, model, images, ecfg)?;
    Ok(OptimizeOutcome {
        pose,
        energy: final_report.value,
        accepted_steps,
        clamped_count: final_report.clamped_count,
    })
}

/// Rolling tracker state: the two previous poses and loss-of-track bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct TrackState {
    pub prev: Option<Pose>,
    pub prev2: Option<Pose>,
    pub frame_index: usize,
    /// Set after a suspected loss of track; the next frame starts from the
    /// previous pose without extrapolation.
    pub suppress_extrapolation: bool,
    energy_history: Vec<f64>,
}

impl TrackState {
    pub fn new() -> Self {
        Self::default()
    }

    fn record_energy(&mut self, value: f64, window: usize) {
        self.energy_history.push(value);
        if self.energy_history.len() > window {
            self.energy_history.remove(0);
        }
    }

    fn median_energy(&self) -> Option<f64> {
        if self.energy_history.is_empty() {
            return None;
        }
        let mut sorted = self.energy_history.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(sorted[sorted.len() / 2])
    }
}

/// Predicts the next frame's starting pose by linear extrapolation of the
/// two previous poses, clamped to the model limits. With a single previous
/// pose (or after a loss of track) the previous pose is reused; with none,
/// the provided seed pose.
pub fn extrapolate_init(state: &TrackState, model: &SkeletonModel, seed: &Pose) -> Result<Pose> {
    match (&state.prev, &state.prev2) {
        (Some(p1), Some(p2)) if !state.suppress_extrapolation => clamp_pose(
            model,
            &Pose {
                theta: &p1.theta * 2.0 - &p2.theta,
            },
        ),
        (Some(p1), _) => Ok(p1.clone()),
        (None, _) => Ok(seed.clone()),
    }
}

/// Sequence-level tracker parameters.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// A frame whose final energy falls below this fraction of the running
    /// median is flagged as a loss of track.
    pub loss_fraction: f64,
    /// Number of recent frames in the running median.
    pub median_window: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            loss_fraction: 0.25,
            median_window: 16,
        }
    }
}

/// Per-frame tracking diagnostics.
#[derive(Debug, Clone)]
pub struct FrameDiagnostics {
    pub energy: f64,
    pub clamped_count: usize,
    pub accepted_steps: usize,
    /// The frame was initialized without extrapolation after a loss flag.
    pub reinitialized: bool,
    /// The frame's energy collapsed below the loss threshold.
    pub lost_track: bool,
    /// Energy evaluation failed; the pose is carried from the initializer.
    pub failed: Option<String>,
}

/// Tracking output: one pose per frame plus diagnostics.
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub poses: Vec<Pose>,
    pub frames: Vec<FrameDiagnostics>,
}

/// Tracks a sequence of per-camera image SoGs.
///
/// Per-frame optimization failures are recorded in the diagnostics and the
/// tracker continues from the extrapolated pose.
pub fn track_sequence(
    model: &SkeletonModel,
    frames: &[Vec<ImageSoG>],
    seed: &Pose,
    ocfg: &OptimizerConfig,
    ecfg: &EnergyConfig,
    tcfg: &TrackerConfig,
) -> Result<TrackOutput> {
    if seed.len() != model.n_dofs() {
        return Err(SagError::InvalidPose {
            expected: model.n_dofs(),
            got: seed.len(),
        });
    }
    let mut state = TrackState::new();
    let mut poses = Vec::with_capacity(frames.len());
    let mut diags = Vec::with_capacity(frames.len());
    for (frame_index, images) in frames.iter().enumerate() {
        let reinitialized = state.suppress_extrapolation;
        let init = extrapolate_init(&state, model, seed)?;
        let (pose, diag) = match optimize_pose_detailed(&init, model, images, ocfg, ecfg) {
            Ok(outcome) => {
                let median = state.median_energy();
                let lost = median.is_some_and(|m| outcome.energy < tcfg.loss_fraction * m);
                state.record_energy(outcome.energy, tcfg.median_window);
                (
                    outcome.pose,
                    FrameDiagnostics {
                        energy: outcome.energy,
                        clamped_count: outcome.clamped_count,
                        accepted_steps: outcome.accepted_steps,
                        reinitialized,
                        lost_track: lost,
                        failed: None,
                    },
                )
            }
            Err(err) => {
                let err = err.in_frame(frame_index);
                (
                    init.clone(),
                    FrameDiagnostics {
                        energy: f64::NAN,
                        clamped_count: 0,
                        accepted_steps: 0,
                        reinitialized,
                        lost_track: true,
                        failed: Some(err.to_string()),
                    },
                )
            }
        };
        state.suppress_extrapolation = diag.lost_track;
        state.prev2 = state.prev.take();
        state.prev = Some(pose.clone());
        state.frame_index = frame_index + 1;
        poses.push(pose);
        diags.push(diag);
    }
    Ok(TrackOutput {
        poses,
        frames: diags,
    })
}
