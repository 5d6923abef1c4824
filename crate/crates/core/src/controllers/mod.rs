//! Controllers as the episode engine sees them.
//!
//! A [`Controller`] is immutable during servoing; per-episode state (such as a
//! generated last layer) lives in the [`ControlSession`] it opens for one
//! desired pose.

pub mod neural;

pub use neural::{
    AeNc, Batch, ControllerCheckpoint, FcnNc, Generated, HpnNc, NeuralController, NeuralKind,
    NetworkWidths, HYPER_OUT, LATENT_DIM, PENULTIMATE, TWIST_DIM,
};

use crate::camera::{Intrinsics, KeypointSet};
use crate::classic::{ibvs, pbvs, DepthSource, DepthVector, DEFAULT_DAMPING, DEFAULT_GAIN};
use crate::error::Result;
use crate::geometry::{Pose, Twist};

/// Everything a controller may look at during one control step.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    /// Keypoints observed at the desired pose (`s*`).
    pub desired: &'a KeypointSet,
    /// Keypoints observed at the current pose (`s`).
    pub current: &'a KeypointSet,
    /// True per-point depths at the current pose.
    pub depths: &'a [f64],
    /// True per-point depths at the desired pose.
    pub desired_depths: &'a [f64],
    /// Ground-truth `^{c*}T_c`.
    pub relative: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

pub trait ControlSession {
    /// Raw command; the episode engine clamps it.
    fn command(&mut self, obs: &Observation<'_>) -> Result<Twist>;
}

pub trait Controller: Send + Sync {
    fn label(&self) -> String;

    /// Trainable parameters used at servo time, if any.
    fn param_count(&self) -> Option<usize> {
        None
    }

    /// Opens a session for one desired keypoint set.
    fn session<'a>(
        &'a self,
        desired: &KeypointSet,
        k: &Intrinsics,
    ) -> Result<Box<dyn ControlSession + 'a>>;
}

/// PBVS on ground-truth relative poses; the training expert.
#[derive(Clone, Copy, Debug)]
pub struct PbvsController {
    pub gain: f64,
    /// Commands are scaled down uniformly to this bound, so translation and
    /// rotation stay in step while saturated.
    pub saturation: Option<f64>,
}

impl PbvsController {
    pub fn new(gain: f64, saturation: Option<f64>) -> Self {
        Self { gain, saturation }
    }

    pub fn twist(&self, rel: &Pose) -> Twist {
        let t = pbvs(rel, self.gain);
        match self.saturation {
            Some(limit) => t.saturated(limit),
            None => t,
        }
    }
}

impl Default for PbvsController {
    fn default() -> Self {
        Self::new(DEFAULT_GAIN, Some(0.15))
    }
}

impl ControlSession for PbvsController {
    fn command(&mut self, obs: &Observation<'_>) -> Result<Twist> {
        Ok(self.twist(obs.relative))
    }
}

impl Controller for PbvsController {
    fn label(&self) -> String {
        "pbvs".into()
    }

    fn session<'a>(&'a self, _: &KeypointSet, _: &Intrinsics) -> Result<Box<dyn ControlSession + 'a>> {
        Ok(Box::new(*self))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IbvsController {
    pub gain: f64,
    pub damping: f64,
    pub depth: DepthSource,
}

impl Default for IbvsController {
    fn default() -> Self {
        Self {
            gain: DEFAULT_GAIN,
            damping: DEFAULT_DAMPING,
            depth: DepthSource::Current,
        }
    }
}

impl ControlSession for IbvsController {
    fn command(&mut self, obs: &Observation<'_>) -> Result<Twist> {
        let z = match self.depth {
            DepthSource::Current => obs.depths,
            DepthSource::Desired => obs.desired_depths,
        };
        ibvs(
            obs.current,
            obs.desired,
            &DepthVector::new(z.to_vec())?,
            obs.intrinsics,
            self.gain,
            self.damping,
        )
    }
}

impl Controller for IbvsController {
    fn label(&self) -> String {
        "ibvs".into()
    }

    fn session<'a>(&'a self, _: &KeypointSet, _: &Intrinsics) -> Result<Box<dyn ControlSession + 'a>> {
        Ok(Box::new(*self))
    }
}

/// Always commands zero velocity.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroController;

impl ControlSession for ZeroController {
    fn command(&mut self, _: &Observation<'_>) -> Result<Twist> {
        Ok(Twist::zero())
    }
}

impl Controller for ZeroController {
    fn label(&self) -> String {
        "zero".into()
    }

    fn session<'a>(&'a self, _: &KeypointSet, _: &Intrinsics) -> Result<Box<dyn ControlSession + 'a>> {
        Ok(Box::new(ZeroController))
    }
}
