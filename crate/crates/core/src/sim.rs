//! Episode engine: pose sampling, the 0.1 s control loop, velocity clamping,
//! termination and success bookkeeping.
//!
//! The object sits at the origin of its frame with +Z pointing toward the
//! camera side. Cameras look at the object origin; a uniform yaw about the
//! optical axis sets the remaining rotational degree of freedom.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{builtin_model, in_fov, project_with_depth, Intrinsics, KeypointSet, TargetModel};
use crate::controllers::{Controller, Observation};
use crate::error::{Result, ServoError};
use crate::geometry::{
    integrate_twist, integrate_twist_decoupled, pose_errors, relative_pose, rotation_to_axis_angle, Pose, Twist,
};

/// How a commanded twist moves the camera over one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Camera center moves along `R·v`, orientation turns by `exp(ω dt)`.
    #[default]
    Decoupled,
    /// Exact SE(3) exponential of the body twist (screw motion).
    Se3Exp,
}

impl Integrator {
    pub fn step(self, pose: &Pose, twist: &Twist, dt: f64) -> Pose {
        match self {
            Integrator::Decoupled => integrate_twist_decoupled(pose, twist, dt),
            Integrator::Se3Exp => integrate_twist(pose, twist, dt),
        }
    }
}

/// How commands are brought inside `±v_max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityLimit {
    /// Clip each component independently.
    #[default]
    Componentwise,
    /// Scale the whole twist down; keeps its direction.
    Scale,
}

impl VelocityLimit {
    pub fn apply(self, twist: &Twist, limit: f64) -> Twist {
        match self {
            VelocityLimit::Scale => twist.saturated(limit),
            VelocityLimit::Componentwise => twist.clamped(limit),
        }
    }
}

/// Axis-aligned camera-position bounds in the object frame (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: [-0.4, -0.4, 0.02],
            max: [0.4, 0.4, 0.6],
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Initial-pose regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialMode {
    /// Look-at pose above the object with translation disturbance and free yaw.
    #[default]
    Full,
    /// Desired pose shifted by at most `max_translation` per axis, same rotation.
    SmallTranslation { max_translation: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub desired_height: f64,
    pub desired_disturbance: f64,
    pub initial_height: f64,
    pub initial_disturbance: f64,
    /// Maximum `|^{c*}t_c|` per axis (m).
    pub max_offset_translation: [f64; 3],
    /// Maximum `|θu|` per axis (degrees).
    pub max_offset_rotation_deg: [f64; 3],
    pub max_attempts: usize,
    pub initial_mode: InitialMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            desired_height: 0.15,
            desired_disturbance: 0.05,
            initial_height: 0.30,
            initial_disturbance: 0.10,
            max_offset_translation: [0.15, 0.15, 0.30],
            max_offset_rotation_deg: [53.1, 53.1, 180.0],
            max_attempts: 100,
            initial_mode: InitialMode::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub model: TargetModel,
    pub intrinsics: Intrinsics,
    /// Control period (s).
    pub dt: f64,
    /// `δ_s`
    pub max_steps: usize,
    /// `δ_f` (pixels, summed L1 over keypoints).
    pub kp_threshold: f64,
    /// `δ_r` (rad).
    pub re_threshold: f64,
    /// `δ_t` (m).
    pub te_threshold: f64,
    pub v_max: f64,
    pub velocity_limit: VelocityLimit,
    pub lambda: f64,
    pub workspace: Workspace,
    /// Gaussian pixel noise of the observer (σ, pixels).
    pub observer_noise_sigma: f64,
    pub sampling: SamplingConfig,
    pub integrator: Integrator,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            model: builtin_model("apriltag").expect("bundled model"),
            intrinsics: Intrinsics::default(),
            dt: 0.1,
            max_steps: 600,
            kp_threshold: 10.0,
            re_threshold: PI / 36.0,
            te_threshold: 0.00866,
            v_max: 0.15,
            velocity_limit: VelocityLimit::Componentwise,
            lambda: 0.4,
            workspace: Workspace::default(),
            observer_noise_sigma: 0.0,
            sampling: SamplingConfig::default(),
            integrator: Integrator::Decoupled,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let positive = [
            ("dt", self.dt),
            ("kp_threshold", self.kp_threshold),
            ("re_threshold", self.re_threshold),
            ("te_threshold", self.te_threshold),
            ("v_max", self.v_max),
            ("lambda", self.lambda),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ServoError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.max_steps == 0 {
            return Err(ServoError::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.observer_noise_sigma >= 0.0) {
            return Err(ServoError::InvalidConfig("observer_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ConvergedKeypoints,
    ConvergedPose,
    MaxSteps,
    LeftWorkspace,
    FeatureLost,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::ConvergedKeypoints | Outcome::ConvergedPose)
    }
}

/// One row of an episode trajectory. The terminal row carries a zero twist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Camera pose in the object frame.
    pub pose: Pose,
    /// Noise-free keypoints at `pose`.
    pub keypoints: KeypointSet,
    /// Executed (clamped) twist.
    pub twist: Twist,
    pub kp_err_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    /// Control steps executed.
    pub steps: usize,
    /// Final rotation error (rad).
    pub final_re: f64,
    /// Final translation error (m).
    pub final_te: f64,
    pub final_kp_err: f64,
    pub converged_kp: bool,
    pub converged_pose: bool,
    pub success: bool,
    pub desired: Pose,
    pub initial: Pose,
    pub desired_keypoints: KeypointSet,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pub trajectory: Vec<StepRecord>,
}

/// Per-episode random stream; episode `index` of run `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Camera at `position` looking at the object origin, rotated by `yaw` about
/// its optical axis. `yaw = 0` aligns camera +X with object +X.
pub fn look_at_origin(position: Vector3<f64>, yaw: f64) -> Pose {
    let z = (-position).normalize();
    let x_ref = Vector3::x();
    let x0 = (x_ref - z * x_ref.dot(&z)).normalize();
    let y0 = z.cross(&x0);
    let (s, c) = yaw.sin_cos();
    let x = x0 * c + y0 * s;
    let y = z.cross(&x);
    Pose::new(Matrix3::from_columns(&[x, y, z]), position)
}

fn uniform_box<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Vector3<f64> {
    if half > 0.0 {
        Vector3::new(
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        )
    } else {
        Vector3::zeros()
    }
}

fn visible(config: &EpisodeConfig, pose: &Pose) -> bool {
    project_with_depth(&config.model, pose, &config.intrinsics)
        .map(|(kp, _)| in_fov(&kp, &config.intrinsics))
        .unwrap_or(false)
}

pub fn sample_desired_pose<R: Rng + ?Sized>(rng: &mut R, config: &EpisodeConfig) -> Result<Pose> {
    let s = &config.sampling;
    for _ in 0..s.max_attempts {
        let d = uniform_box(rng, s.desired_disturbance);
        let yaw = rng.random_range(-PI..PI);
        let pose = look_at_origin(Vector3::new(d.x, d.y, s.desired_height + d.z), yaw);
        if visible(config, &pose) {
            return Ok(pose);
        }
    }
    Err(ServoError::SamplingExhausted(s.max_attempts))
}

/// Whether `^{c*}T_c` lies inside the configured offset envelope.
pub fn within_offset_envelope(rel: &Pose, s: &SamplingConfig) -> bool {
    let tu = rotation_to_axis_angle(&rel.rotation).vector();
    (0..3).all(|i| {
        rel.translation[i].abs() <= s.max_offset_translation[i]
            && tu[i].abs().to_degrees() <= s.max_offset_rotation_deg[i]
    })
}

pub fn sample_initial_pose<R: Rng + ?Sized>(rng: &mut R, config: &EpisodeConfig, desired: &Pose) -> Result<Pose> {
    let s = &config.sampling;
    for _ in 0..s.max_attempts {
        let pose = match s.initial_mode {
            InitialMode::Full => {
                let d = uniform_box(rng, s.initial_disturbance);
                let yaw = rng.random_range(-PI..PI);
                look_at_origin(Vector3::new(d.x, d.y, s.initial_height + d.z), yaw)
            }
            InitialMode::SmallTranslation { max_translation } => {
                let d = uniform_box(rng, max_translation);
                Pose::new(desired.rotation, desired.translation + d)
            }
        };
        if !visible(config, &pose) || !config.workspace.contains(&pose.translation) {
            continue;
        }
        if matches!(s.initial_mode, InitialMode::Full)
            && !within_offset_envelope(&relative_pose(desired, &pose), s)
        {
            continue;
        }
        return Ok(pose);
    }
    Err(ServoError::SamplingExhausted(s.max_attempts))
}

/// `(converged_kp, converged_pose)`: `Σ|Δu|+|Δv| ≤ δ_f` (inclusive), and
/// `RE < δ_r ∧ TE < δ_t`.
pub fn check_success(kp_err_sum: f64, rel: &Pose, config: &EpisodeConfig) -> (bool, bool) {
    let (re, te) = pose_errors(rel);
    (
        kp_err_sum <= config.kp_threshold,
        re < config.re_threshold && te < config.te_threshold,
    )
}

/// Samples a desired and an initial pose, then runs the episode.
pub fn run_episode<R: Rng + ?Sized>(controller: &dyn Controller, config: &EpisodeConfig, rng: &mut R) -> Result<EpisodeResult> {
    let desired = sample_desired_pose(rng, config)?;
    let initial = sample_initial_pose(rng, config, &desired)?;
    run_episode_from(controller, config, &desired, &initial, rng)
}

fn add_noise<R: Rng + ?Sized>(kp: &KeypointSet, noise: Option<&Normal<f64>>, rng: &mut R) -> KeypointSet {
    match noise {
        None => kp.clone(),
        Some(n) => KeypointSet::new(
            kp.pixels
                .iter()
                .map(|p| p + Vector2::new(n.sample(rng), n.sample(rng)))
                .collect(),
        ),
    }
}

/// Runs one episode between fixed poses. `rng` only drives observer noise.
pub fn run_episode_from<R: Rng + ?Sized>(
    controller: &dyn Controller,
    config: &EpisodeConfig,
    desired: &Pose,
    initial: &Pose,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let k = &config.intrinsics;
    let (s_star, desired_depths) = project_with_depth(&config.model, desired, k)?;
    let noise = if config.observer_noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.observer_noise_sigma).map_err(|e| ServoError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let observed_star = add_noise(&s_star, noise.as_ref(), rng);
    let mut session = controller.session(&observed_star, k)?;

    let mut pose = *initial;
    let mut trajectory = Vec::new();
    let mut diagnostic = None;
    let mut step = 0;

    let finish = |outcome: Outcome, pose: Pose, kp: KeypointSet, kp_err: f64, step: usize, trajectory: Vec<StepRecord>, diagnostic: Option<String>| {
        let rel = relative_pose(desired, &pose);
        let (re, te) = pose_errors(&rel);
        let (ck, cp) = check_success(kp_err, &rel, config);
        let mut trajectory = trajectory;
        trajectory.push(StepRecord {
            step,
            pose,
            keypoints: kp,
            twist: Twist::zero(),
            kp_err_sum: kp_err,
        });
        EpisodeResult {
            outcome,
            steps: step,
            final_re: re,
            final_te: te,
            final_kp_err: kp_err,
            converged_kp: ck,
            converged_pose: cp,
            success: outcome.is_success(),
            desired: *desired,
            initial: *initial,
            desired_keypoints: s_star.clone(),
            diagnostic,
            trajectory,
        }
    };

    // Keypoints at the current pose; `None` once a feature is lost.
    let observe = |pose: &Pose| -> Option<(KeypointSet, Vec<f64>)> {
        project_with_depth(&config.model, pose, k)
            .ok()
            .filter(|(kp, _)| in_fov(kp, k))
    };

    let (mut kp, mut depths) = match observe(&pose) {
        Some(v) => v,
        None => {
            let kp = project_with_depth(&config.model, &pose, k).map(|r| r.0).unwrap_or_else(|_| s_star.clone());
            let err = kp.l1_error(&s_star);
            return Ok(finish(Outcome::FeatureLost, pose, kp, err, 0, trajectory, Some("initial pose has features outside the image".into())));
        }
    };

    loop {
        let kp_err = kp.l1_error(&s_star);
        let rel = relative_pose(desired, &pose);
        let (ck, cp) = check_success(kp_err, &rel, config);
        if ck || cp {
            let outcome = if ck { Outcome::ConvergedKeypoints } else { Outcome::ConvergedPose };
            return Ok(finish(outcome, pose, kp, kp_err, step, trajectory, diagnostic));
        }
        if step >= config.max_steps {
            return Ok(finish(Outcome::MaxSteps, pose, kp, kp_err, step, trajectory, diagnostic));
        }

        let observed = add_noise(&kp, noise.as_ref(), rng);
        let obs = Observation {
            desired: &observed_star,
            current: &observed,
            depths: &depths,
            desired_depths: &desired_depths,
            relative: &rel,
            intrinsics: k,
        };
        let twist = match session.command(&obs) {
            Ok(t) => config.velocity_limit.apply(&t, config.v_max),
            Err(e) => {
                diagnostic = Some(format!("controller error: {e}"));
                return Ok(finish(Outcome::FeatureLost, pose, kp, kp_err, step, trajectory, diagnostic));
            }
        };
        trajectory.push(StepRecord {
            step,
            pose,
            keypoints: kp.clone(),
            twist,
            kp_err_sum: kp_err,
        });

        let next = config.integrator.step(&pose, &twist, config.dt);
        step += 1;
        if !config.workspace.contains(&next.translation) {
            let kp_next = project_with_depth(&config.model, &next, k).map(|r| r.0).unwrap_or(kp);
            let err = kp_next.l1_error(&s_star);
            return Ok(finish(Outcome::LeftWorkspace, next, kp_next, err, step, trajectory, diagnostic));
        }
        match observe(&next) {
            Some((kp_next, d)) => {
                pose = next;
                kp = kp_next;
                depths = d;
            }
            None => {
                let kp_next = project_with_depth(&config.model, &next, k).map(|r| r.0).unwrap_or(kp);
                let err = kp_next.l1_error(&s_star);
                return Ok(finish(Outcome::FeatureLost, next, kp_next, err, step, trajectory, diagnostic));
            }
        }
    }
}

/// Writes `step, pose (12), u/v per keypoint, twist (6), kp_err_sum`.
pub fn write_trajectory_csv(path: &Path, result: &EpisodeResult) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let n = result.desired_keypoints.len();
    let mut header: Vec<String> = vec!["step".into()];
    for r in 0..3 {
        for c in 0..3 {
            header.push(format!("r{r}{c}"));
        }
    }
    header.extend(["tx", "ty", "tz"].map(String::from));
    for i in 0..n {
        header.push(format!("u{i}"));
        header.push(format!("v{i}"));
    }
    header.extend(["vx", "vy", "vz", "wx", "wy", "wz", "kp_err_sum"].map(String::from));
    w.write_record(&header)?;
    for rec in &result.trajectory {
        let mut row = vec![rec.step.to_string()];
        row.extend(rec.pose.to_array().iter().map(f64::to_string));
        row.extend(rec.keypoints.flatten().iter().map(f64::to_string));
        row.extend(rec.twist.to_array().iter().map(f64::to_string));
        row.push(rec.kp_err_sum.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the rows written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| ServoError::InvalidConfig(format!("bad CSV value `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        let n = (vals.len() - 1 - 12 - 7) / 2;
        let pose = Pose::new(
            Matrix3::from_row_slice(&vals[1..10]),
            Vector3::new(vals[10], vals[11], vals[12]),
        );
        let kp = KeypointSet::new((0..n).map(|i| Vector2::new(vals[13 + 2 * i], vals[14 + 2 * i])).collect());
        let t0 = 13 + 2 * n;
        out.push(StepRecord {
            step: vals[0] as usize,
            pose,
            keypoints: kp,
            twist: Twist::from_slice(&vals[t0..t0 + 6]),
            kp_err_sum: vals[t0 + 6],
        });
    }
    Ok(out)
}
