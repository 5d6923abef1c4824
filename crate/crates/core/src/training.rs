//! Imitation of the PBVS expert with dataset aggregation.
//!
//! Epoch 0 always collects under the expert. With `dagger` set, every later
//! epoch collects under the learner, and each visited state is labeled with
//! the clamped expert twist computed from ground-truth poses.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project, KeypointSet};
use crate::controllers::{AeNc, Batch, Controller, NeuralController, PbvsController};
use crate::error::{Result, ServoError};
use crate::eval::{evaluate, EvalOptions};
use crate::geometry::{relative_pose, Pose, Twist};
use crate::sim::{run_episode_from, sample_desired_pose, sample_initial_pose, EpisodeConfig};

/// `(s*, s, clamped expert twist)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcSample {
    pub s_star: KeypointSet,
    pub s: KeypointSet,
    pub expert_twist: Twist,
}

/// Append-only sample buffer.
#[derive(Clone, Debug, Default)]
pub struct DatasetNc {
    samples: Vec<NcSample>,
    /// Oldest samples are dropped beyond this size; `None` keeps everything.
    pub capacity: Option<usize>,
}

impl DatasetNc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, new: Vec<NcSample>) {
        self.samples.extend(new);
        if let Some(cap) = self.capacity {
            if self.samples.len() > cap {
                let excess = self.samples.len() - cap;
                self.samples.drain(..excess);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[NcSample] {
        &self.samples
    }

    /// `size` samples drawn uniformly with replacement.
    pub fn sample_batch<'a, R: Rng + ?Sized>(&'a self, size: usize, rng: &mut R) -> Result<Vec<&'a NcSample>> {
        if self.samples.is_empty() {
            return Err(ServoError::EmptyDataset);
        }
        Ok((0..size)
            .map(|_| &self.samples[rng.random_range(0..self.samples.len())])
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub collect_steps_per_epoch: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub dagger: bool,
    /// Episodes in the between-epoch success probe; 0 disables it.
    pub probe_episodes: usize,
    /// Learning rate at the last batch relative to the configured one; the
    /// rate follows a half cosine in between. 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 100,
            collect_steps_per_epoch: 10_000,
            batches_per_epoch: 500,
            batch_size: 512,
            dagger: true,
            probe_episodes: 50,
            final_lr_fraction: FINAL_LR_FRACTION,
        }
    }
}

impl TrainSchedule {
    /// Reduced budget used for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            collect_steps_per_epoch: 2000,
            batches_per_epoch: 100,
            batch_size: 256,
            dagger: true,
            probe_episodes: 50,
            final_lr_fraction: FINAL_LR_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.collect_steps_per_epoch == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(ServoError::InvalidConfig("training schedule entries must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(ServoError::InvalidConfig("final_lr_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Expert label for a camera pose, limited like an executed command.
pub fn expert_label(desired: &Pose, current: &Pose, config: &EpisodeConfig) -> Twist {
    let expert = PbvsController::new(config.lambda, Some(config.v_max));
    config
        .velocity_limit
        .apply(&expert.twist(&relative_pose(desired, current)), config.v_max)
}

/// Runs episodes under `policy` (or under the expert when `policy` is `None`)
/// until exactly `steps` states are labeled.
pub fn collect<R: Rng + ?Sized>(
    policy: Option<&dyn Controller>,
    config: &EpisodeConfig,
    steps: usize,
    fixed_desired: Option<&Pose>,
    rng: &mut R,
) -> Result<Vec<NcSample>> {
    let expert = PbvsController::new(config.lambda, Some(config.v_max));
    let actor: &dyn Controller = policy.unwrap_or(&expert);
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let desired = match fixed_desired {
            Some(p) => *p,
            None => sample_desired_pose(&mut ep_rng, config)?,
        };
        let initial = sample_initial_pose(&mut ep_rng, config, &desired)?;
        let result = run_episode_from(actor, config, &desired, &initial, &mut ep_rng)?;
        for rec in &result.trajectory {
            if out.len() == steps {
                break;
            }
            out.push(NcSample {
                s_star: result.desired_keypoints.clone(),
                s: rec.keypoints.clone(),
                expert_twist: expert_label(&desired, &rec.pose, config),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dataset_size: usize,
    pub mean_loss: f64,
    pub probe_sr: Option<f64>,
    pub probe_ts: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn probe_curve(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.probe_sr).collect()
    }
}

const AE_PRETRAIN_POSES: usize = 2000;
const AE_PRETRAIN_STEPS: usize = 2000;

/// Fits the autoencoder on desired keypoints of `poses` sampled desired poses
/// and freezes it. Returns the reconstruction curve.
pub fn pretrain_autoencoder<R: Rng + ?Sized>(
    ae: &mut AeNc,
    config: &EpisodeConfig,
    poses: usize,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut desired = Vec::with_capacity(poses);
    for _ in 0..poses {
        let p = sample_desired_pose(rng, config)?;
        desired.push(project(&config.model, &p, &config.intrinsics)?.to_network_input(&config.intrinsics));
    }
    ae.pretrain(&desired, steps, 256, rng)
}

/// Seed for the between-epoch probe; the same episodes every epoch.
const PROBE_SEED_SALT: u64 = 0x05ee_d0f9_b0be;

pub const FINAL_LR_FRACTION: f64 = 0.1;

/// Half-cosine decay from `base` to `base · fraction` over `total` steps.
pub fn cosine_lr(base: f64, fraction: f64, step: usize, total: usize) -> f64 {
    let t = if total > 1 { step as f64 / (total - 1) as f64 } else { 1.0 };
    base * (fraction + (1.0 - fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Runs `batches` steps; `lr_at(i)` sets the rate of the i-th of them.
fn train_batches<R: Rng + ?Sized>(
    controller: &mut NeuralController,
    dataset: &DatasetNc,
    batches: usize,
    batch_size: usize,
    config: &EpisodeConfig,
    lr_at: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batches {
        controller.set_lr(lr_at(i));
        let picks = dataset.sample_batch(batch_size, rng)?;
        let batch = Batch::from_samples(&picks, &config.intrinsics)?;
        total += controller.train_step(&batch)?;
    }
    Ok(total / batches as f64)
}

/// Collect-then-fit loop. `on_epoch` sees each record as soon as it exists.
pub fn train<R: Rng + ?Sized>(
    controller: &mut NeuralController,
    schedule: &TrainSchedule,
    config: &EpisodeConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    schedule.validate()?;
    if let NeuralController::Ae(ae) = controller {
        if !ae.frozen {
            pretrain_autoencoder(ae, config, AE_PRETRAIN_POSES, AE_PRETRAIN_STEPS, rng)?;
        }
    }
    let probe_seed = config.seed ^ PROBE_SEED_SALT;
    let base_lr = controller.lr();
    let total = schedule.epochs * schedule.batches_per_epoch;
    let mut dataset = DatasetNc::new();
    let mut log = TrainingLog::default();
    for epoch in 0..schedule.epochs {
        let learner = schedule.dagger && epoch > 0;
        let policy: Option<&dyn Controller> = if learner { Some(&*controller) } else { None };
        let fresh = collect(policy, config, schedule.collect_steps_per_epoch, None, rng)?;
        dataset.extend(fresh);
        let offset = epoch * schedule.batches_per_epoch;
        let lr_at = |i| cosine_lr(base_lr, schedule.final_lr_fraction, offset + i, total);
        let mean_loss = train_batches(controller, &dataset, schedule.batches_per_epoch, schedule.batch_size, config, lr_at, rng);
        controller.set_lr(base_lr);
        let mean_loss = mean_loss?;
        let (probe_sr, probe_ts) = if schedule.probe_episodes > 0 {
            let (report, _) = evaluate(&*controller, config, &EvalOptions::new(schedule.probe_episodes, probe_seed))?;
            (Some(report.sr), report.ts.map(|t| t.mean))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            dataset_size: dataset.len(),
            mean_loss,
            probe_sr,
            probe_ts,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRound {
    pub round: usize,
    pub sr: f64,
    pub mean_ts: Option<f64>,
    pub dataset_size: usize,
}

/// Training restricted to one desired pose, with the same expert-first
/// collection as [`train`]. Round 0 is the baseline evaluation; each later
/// round collects, fits and re-evaluates on `eval_episodes` initial poses
/// drawn against `desired`.
#[allow(clippy::too_many_arguments)]
pub fn finetune<R: Rng + ?Sized>(
    controller: &mut NeuralController,
    desired: &Pose,
    rounds: usize,
    schedule: &TrainSchedule,
    eval_episodes: usize,
    eval_seed: u64,
    config: &EpisodeConfig,
    rng: &mut R,
) -> Result<Vec<FinetuneRound>> {
    let evaluate_here = |c: &NeuralController| -> Result<(f64, Option<f64>)> {
        let mut opts = EvalOptions::new(eval_episodes, eval_seed);
        opts.fixed_desired = Some(desired);
        let (r, _) = evaluate(c, config, &opts)?;
        Ok((r.sr, r.ts.map(|t| t.mean)))
    };
    let mut dataset = DatasetNc::new();
    let (sr, mean_ts) = evaluate_here(controller)?;
    let mut out = vec![FinetuneRound {
        round: 0,
        sr,
        mean_ts,
        dataset_size: 0,
    }];
    let base_lr = controller.lr();
    let total = rounds * schedule.batches_per_epoch;
    for round in 1..=rounds {
        let learner = schedule.dagger && round > 1;
        let policy: Option<&dyn Controller> = if learner { Some(&*controller) } else { None };
        let fresh = collect(policy, config, schedule.collect_steps_per_epoch, Some(desired), rng)?;
        dataset.extend(fresh);
        let offset = (round - 1) * schedule.batches_per_epoch;
        let lr_at = |i| cosine_lr(base_lr, schedule.final_lr_fraction, offset + i, total);
        let fitted = train_batches(controller, &dataset, schedule.batches_per_epoch, schedule.batch_size, config, lr_at, rng);
        controller.set_lr(base_lr);
        fitted?;
        let (sr, mean_ts) = evaluate_here(controller)?;
        out.push(FinetuneRound {
            round,
            sr,
            mean_ts,
            dataset_size: dataset.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::episode_rng;

    #[test]
    fn collect_yields_exact_count_and_clamped_labels() {
        let config = EpisodeConfig::default();
        let mut rng = episode_rng(4, 0);
        let samples = collect(None, &config, 1000, None, &mut rng).unwrap();
        assert_eq!(samples.len(), 1000);
        assert!(samples.iter().all(|s| s.expert_twist.max_abs() <= 0.15));
        assert!(samples.iter().all(|s| s.s.len() == 4 && s.s_star.len() == 4));
    }

    #[test]
    fn dataset_aggregation_keeps_everything() {
        let config = EpisodeConfig::default();
        let mut rng = episode_rng(5, 0);
        let mut ds = DatasetNc::new();
        for k in 1..=3 {
            ds.extend(collect(None, &config, 200, None, &mut rng).unwrap());
            assert_eq!(ds.len(), 200 * k);
        }
        ds.capacity = Some(250);
        ds.extend(collect(None, &config, 10, None, &mut rng).unwrap());
        assert_eq!(ds.len(), 250);
        assert!(DatasetNc::new().sample_batch(4, &mut rng).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(TrainSchedule::default().validate().is_ok());
        let bad = TrainSchedule { batch_size: 0, ..TrainSchedule::desk() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0.1, 0, 11), 1e-3);
        assert!((cosine_lr(1e-3, 0.1, 10, 11) - 1e-4).abs() < 1e-18);
        assert!((cosine_lr(1e-3, 0.1, 5, 11) - 5.5e-4).abs() < 1e-15);
        assert_eq!(cosine_lr(1e-3, 1.0, 7, 11), 1e-3);
        let zero_frac = TrainSchedule { final_lr_fraction: 0.0, ..TrainSchedule::desk() };
        assert!(zero_frac.validate().is_err());
    }
}
