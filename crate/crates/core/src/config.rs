//! Run configuration: one JSON document with sections
//! `camera`, `episode`, `sampling`, `controller` and `training`.
//!
//! Every field has a default, so `{}` is a complete config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{builtin_model, Intrinsics, TargetModel};
use crate::classic::{DepthSource, DEFAULT_DAMPING, DEFAULT_GAIN};
use crate::controllers::NetworkWidths;
use crate::error::{Result, ServoError};
use crate::nn::AdamConfig;
use crate::sim::{EpisodeConfig, Integrator, SamplingConfig, VelocityLimit, Workspace};
use crate::training::TrainSchedule;

/// Builtin model name or a path to a model JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(String),
    Inline(TargetModel),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Named("apriltag".into())
    }
}

impl ModelSpec {
    pub fn resolve(&self, base: Option<&Path>) -> Result<TargetModel> {
        match self {
            ModelSpec::Inline(m) => Ok(m.clone()),
            ModelSpec::Named(name) => {
                if let Ok(m) = builtin_model(name) {
                    return Ok(m);
                }
                let path = match base {
                    Some(dir) if Path::new(name).is_relative() => dir.join(name),
                    _ => name.into(),
                };
                if path.is_file() {
                    TargetModel::from_json_file(&path)
                } else {
                    Err(ServoError::UnknownModel(name.clone()))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub model: ModelSpec,
    pub dt: f64,
    pub max_steps: usize,
    pub kp_threshold: f64,
    pub re_threshold: f64,
    pub te_threshold: f64,
    pub v_max: f64,
    pub velocity_limit: VelocityLimit,
    pub lambda: f64,
    pub workspace: Workspace,
    pub observer_noise_sigma: f64,
    pub integrator: Integrator,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let d = EpisodeConfig::default();
        Self {
            model: ModelSpec::default(),
            dt: d.dt,
            max_steps: d.max_steps,
            kp_threshold: d.kp_threshold,
            re_threshold: d.re_threshold,
            te_threshold: d.te_threshold,
            v_max: d.v_max,
            velocity_limit: d.velocity_limit,
            lambda: d.lambda,
            workspace: d.workspace,
            observer_noise_sigma: d.observer_noise_sigma,
            integrator: d.integrator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub widths: NetworkWidths,
    pub adam: AdamConfig,
    /// Gain of the classical controllers.
    pub gain: f64,
    pub ibvs_damping: f64,
    pub ibvs_depth: DepthSource,
    /// Keep the hypernetwork fixed during fine-tuning.
    pub freeze_hyper: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            widths: NetworkWidths::default(),
            adam: AdamConfig::default(),
            gain: DEFAULT_GAIN,
            ibvs_damping: DEFAULT_DAMPING,
            ibvs_depth: DepthSource::Current,
            freeze_hyper: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub schedule: TrainSchedule,
    /// Budget of one fine-tuning round (collect steps, batches, batch size).
    pub finetune: TrainSchedule,
    pub finetune_rounds: usize,
    pub finetune_eval_episodes: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule::default(),
            finetune: TrainSchedule {
                epochs: 1,
                ..TrainSchedule::default()
            },
            finetune_rounds: 1,
            finetune_eval_episodes: 500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub camera: Intrinsics,
    pub episode: EpisodeSection,
    pub sampling: SamplingConfig,
    pub controller: ControllerSection,
    pub training: TrainingSection,
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ServoError::InvalidConfig(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServoError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        // relative model paths are taken relative to the config file
        if let ModelSpec::Named(name) = &cfg.episode.model {
            if builtin_model(name).is_err() {
                let model = cfg.episode.model.resolve(path.parent())?;
                cfg.episode.model = ModelSpec::Inline(model);
            }
        }
        Ok(cfg)
    }

    /// Fully resolved episode settings.
    pub fn episode_config(&self, seed: u64) -> Result<EpisodeConfig> {
        let e = &self.episode;
        let config = EpisodeConfig {
            model: e.model.resolve(None)?,
            intrinsics: self.camera,
            dt: e.dt,
            max_steps: e.max_steps,
            kp_threshold: e.kp_threshold,
            re_threshold: e.re_threshold,
            te_threshold: e.te_threshold,
            v_max: e.v_max,
            velocity_limit: e.velocity_limit,
            lambda: e.lambda,
            workspace: e.workspace,
            observer_noise_sigma: e.observer_noise_sigma,
            sampling: self.sampling,
            integrator: e.integrator,
            seed,
        };
        config.validate()?;
        self.training.schedule.validate()?;
        Ok(config)
    }

    /// Copy with the model inlined, as written next to run outputs.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.episode.model = ModelSpec::Inline(self.episode.model.resolve(None)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::from_json_str("{}").unwrap();
        assert_eq!(cfg, Config::default());
        let ep = cfg.episode_config(3).unwrap();
        assert_eq!(ep, EpisodeConfig { seed: 3, ..EpisodeConfig::default() });
    }

    #[test]
    fn partial_sections_merge() {
        let cfg = Config::from_json_str(r#"{"episode":{"model":"toy_horse","observer_noise_sigma":2.0},"training":{"schedule":{"epochs":3}}}"#).unwrap();
        let ep = cfg.episode_config(0).unwrap();
        assert_eq!(ep.model.points.len(), 4);
        assert_eq!(ep.model.name, "toy_horse");
        assert_eq!(ep.observer_noise_sigma, 2.0);
        assert_eq!(cfg.training.schedule.epochs, 3);
        assert_eq!(cfg.training.schedule.batch_size, 512);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::from_json_str(r#"{"episode":{"dtt":0.1}}"#).is_err());
        assert!(Config::from_json_str("[").is_err());
        let cfg = Config::from_json_str(r#"{"episode":{"model":"no_such_model"}}"#).unwrap();
        assert!(matches!(cfg.episode_config(0), Err(ServoError::UnknownModel(_))));
        let cfg = Config::from_json_str(r#"{"episode":{"dt":-1.0}}"#).unwrap();
        assert!(cfg.episode_config(0).is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = Config::default().resolved().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = Config::from_json_str(&text).unwrap();
        assert_eq!(back.episode_config(1).unwrap(), cfg.episode_config(1).unwrap());
    }
}
