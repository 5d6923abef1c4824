//! Learned controllers: FCN-NC, AE-NC and the hypernetwork controller HPN-NC.
//!
//! All three map normalized keypoints to `v_max · tanh(·)`, so every emitted
//! twist component already lies inside `(-v_max, v_max)`. Keypoints enter the
//! networks as `((u - cx) / cx, (v - cy) / cy)`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ControlSession, Controller, Observation};
use crate::camera::{Intrinsics, KeypointSet};
use crate::error::{check_dim, Result, ServoError};
use crate::geometry::Twist;
use crate::nn::checkpoint::{self, Header, NetRecord};
use crate::nn::{chain, Activation, AdamConfig, AdamState, DenseNet};
use crate::training::NcSample;

pub const TWIST_DIM: usize = 6;
/// Width of the controller layer feeding the twist output.
pub const PENULTIMATE: usize = 128;
/// Hypernetwork output: a row-major `6 × 128` weight block then 6 biases.
pub const HYPER_OUT: usize = PENULTIMATE * TWIST_DIM + TWIST_DIM;
pub const LATENT_DIM: usize = 8;

/// Scale applied to the hypernetwork's output weights at initialization. The
/// output bias starts as a regular trunk last layer, so a fresh HPN-NC behaves
/// like a freshly initialized FCN-NC plus a small desired-pose modulation.
const HYPER_OUTPUT_GAIN: f64 = 0.05;

/// Hypernetwork learning rate relative to the trunk's. Every hyper parameter
/// moves all 774 generated entries at once, so at a shared rate the generated
/// layer outruns the trunk.
pub const HYPER_LR_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkWidths {
    /// First hidden layer of every controller trunk.
    pub trunk_hidden: usize,
    pub hyper_hidden: [usize; 2],
    pub ae_hidden: usize,
}

impl Default for NetworkWidths {
    fn default() -> Self {
        Self {
            trunk_hidden: 512,
            hyper_hidden: [512, 512],
            ae_hidden: 64,
        }
    }
}

fn trunk_layers(input: usize, hidden: usize) -> Vec<crate::nn::LayerSpec> {
    chain(
        &[input, hidden, PENULTIMATE, TWIST_DIM],
        &[Activation::Relu, Activation::Relu, Activation::Tanh],
    )
}

/// Minibatch in network units.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `s* - s`, normalized, one row per sample.
    pub error: Array2<f64>,
    /// `s*`, normalized.
    pub desired: Array2<f64>,
    /// Expert twists.
    pub target: Array2<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[&NcSample], k: &Intrinsics) -> Result<Self> {
        if samples.is_empty() {
            return Err(ServoError::EmptyDataset);
        }
        let dim = 2 * samples[0].s_star.len();
        let b = samples.len();
        let mut error = Array2::zeros((b, dim));
        let mut desired = Array2::zeros((b, dim));
        let mut target = Array2::zeros((b, TWIST_DIM));
        for (i, smp) in samples.iter().enumerate() {
            let ds = smp.s_star.to_network_input(k);
            let cs = smp.s.to_network_input(k);
            check_dim("batch desired keypoints", dim, ds.len())?;
            check_dim("batch current keypoints", dim, cs.len())?;
            for j in 0..dim {
                error[(i, j)] = ds[j] - cs[j];
                desired[(i, j)] = ds[j];
            }
            for (j, t) in smp.expert_twist.to_array().iter().enumerate() {
                target[(i, j)] = *t;
            }
        }
        Ok(Self {
            error,
            desired,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean over the batch of `‖v_max·a − target‖²`, and its gradient w.r.t. `a`.
fn twist_mse(raw: &Array2<f64>, target: &Array2<f64>, v_max: f64) -> (f64, Array2<f64>) {
    let b = raw.nrows() as f64;
    let diff = raw * v_max - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
    let grad = diff * (2.0 * v_max / b);
    (loss, grad)
}

fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row vector")
}

fn twist_from_raw(raw: &[f64], v_max: f64) -> Twist {
    let scaled: Vec<f64> = raw.iter().map(|a| a * v_max).collect();
    Twist::from_slice(&scaled)
}

fn keypoint_error(desired: &KeypointSet, current: &KeypointSet, k: &Intrinsics) -> Result<Vec<f64>> {
    check_dim("current keypoints", desired.len(), current.len())?;
    let d = desired.to_network_input(k);
    let c = current.to_network_input(k);
    Ok(d.iter().zip(&c).map(|(a, b)| a - b).collect())
}

// ---------------------------------------------------------------------------

/// Fully connected controller on the keypoint error alone.
#[derive(Clone, Debug)]
pub struct FcnNc {
    pub net: DenseNet,
    pub v_max: f64,
    adam: AdamState,
}

impl FcnNc {
    pub fn new<R: Rng + ?Sized>(n_points: usize, widths: &NetworkWidths, v_max: f64, adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let net = DenseNet::init(trunk_layers(2 * n_points, widths.trunk_hidden), rng)?;
        Ok(Self::from_net(net, v_max, adam))
    }

    pub fn from_net(net: DenseNet, v_max: f64, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, net.param_count());
        Self { net, v_max, adam }
    }

    /// `v_max · net(e)` for a normalized `2n` keypoint error.
    pub fn forward(&self, error: &[f64]) -> Result<Twist> {
        let (raw, _) = self.net.forward_vec(error)?;
        Ok(twist_from_raw(&raw, self.v_max))
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let (raw, _) = self.net.forward(batch.error.view())?;
        Ok(twist_mse(&raw, &batch.target, self.v_max).0)
    }

    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let (raw, tape) = self.net.forward(batch.error.view())?;
        let (loss, d_raw) = twist_mse(&raw, &batch.target, self.v_max);
        Ok((loss, self.net.backward(&tape, d_raw.view())?.d_params))
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = self.gradients(batch)?;
        self.adam.step(self.net.params_mut(), &grads)?;
        Ok(loss)
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step_count()
    }
}

// ---------------------------------------------------------------------------

/// A last layer produced by the hypernetwork for one desired keypoint set.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// `6 × 128`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Generated {
    /// Splits a 774-vector: the first 768 entries are the row-major weight.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        check_dim("hypernetwork output", HYPER_OUT, flat.len())?;
        let nw = PENULTIMATE * TWIST_DIM;
        Ok(Self {
            weight: Array2::from_shape_vec((TWIST_DIM, PENULTIMATE), flat[..nw].to_vec())
                .expect("fixed shape"),
            bias: Array1::from(flat[nw..].to_vec()),
        })
    }
}

/// Hypernetwork controller: `hyper(s*)` supplies the trunk's last layer.
#[derive(Clone, Debug)]
pub struct HpnNc {
    pub hyper: DenseNet,
    pub trunk: DenseNet,
    pub v_max: f64,
    /// When set, training leaves the hypernetwork untouched.
    pub freeze_hyper: bool,
    hyper_adam: AdamState,
    trunk_adam: AdamState,
}

impl HpnNc {
    pub fn new<R: Rng + ?Sized>(n_points: usize, widths: &NetworkWidths, v_max: f64, adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let dim = 2 * n_points;
        let [g1, g2] = widths.hyper_hidden;
        let mut hyper = DenseNet::init(
            chain(&[dim, g1, g2, HYPER_OUT], &[Activation::Relu, Activation::Relu, Activation::Linear]),
            rng,
        )?;
        let trunk = DenseNet::init(trunk_layers(dim, widths.trunk_hidden), rng)?;
        // Output bias <- a regular trunk last layer; output weights shrunk.
        let out = hyper.layer_range(2);
        let nw = g2 * HYPER_OUT;
        let base = trunk.params()[trunk.layer_range(2)].to_vec();
        let p = &mut hyper.params_mut()[out];
        p[..nw].iter_mut().for_each(|w| *w *= HYPER_OUTPUT_GAIN);
        p[nw..].copy_from_slice(&base);
        Ok(Self::from_nets(hyper, trunk, v_max, adam))
    }

    pub fn from_nets(hyper: DenseNet, trunk: DenseNet, v_max: f64, adam: AdamConfig) -> Self {
        let hyper_adam = AdamState::new(
            AdamConfig {
                lr: adam.lr * HYPER_LR_SCALE,
                ..adam
            },
            hyper.param_count(),
        );
        let trunk_adam = AdamState::new(adam, trunk.param_count());
        Self {
            hyper,
            trunk,
            v_max,
            freeze_hyper: false,
            hyper_adam,
            trunk_adam,
        }
    }

    /// Last layer for normalized desired keypoints.
    pub fn generate_from_input(&self, desired: &[f64]) -> Result<Generated> {
        let (flat, _) = self.hyper.forward_vec(desired)?;
        Generated::from_flat(&flat)
    }

    pub fn generate(&self, desired: &KeypointSet, k: &Intrinsics) -> Result<Generated> {
        self.generate_from_input(&desired.to_network_input(k))
    }

    /// Trunk with a generated last layer applied to a normalized error.
    pub fn forward_generated(&self, generated: &Generated, error: &[f64]) -> Result<Twist> {
        let overlaid = self
            .trunk
            .overlay_last_layer(generated.weight.view(), generated.bias.view())?;
        let (raw, _) = overlaid.forward(row(error))?;
        Ok(twist_from_raw(raw.as_slice().expect("contiguous"), self.v_max))
    }

    /// Generate-then-run without caching.
    pub fn forward(&self, desired: &KeypointSet, current: &KeypointSet, k: &Intrinsics) -> Result<Twist> {
        let generated = self.generate(desired, k)?;
        self.forward_generated(&generated, &keypoint_error(desired, current, k)?)
    }

    /// A plain FCN-NC holding the generated last layer.
    pub fn materialize(&self, generated: &Generated) -> Result<FcnNc> {
        let mut net = self.trunk.clone();
        net.set_layer(2, generated.weight.view(), generated.bias.view())?;
        Ok(FcnNc::from_net(net, self.v_max, self.trunk_adam.config))
    }

    pub fn servo_param_count(&self) -> usize {
        self.trunk.param_count()
    }

    pub fn total_param_count(&self) -> usize {
        self.trunk.param_count() + self.hyper.param_count()
    }

    fn batch_forward(&self, batch: &Batch) -> Result<HpnForward> {
        let (flat, hyper_tape) = self.hyper.forward(batch.desired.view())?;
        let trunk_tape = self.trunk.forward_layers(0..2, batch.error.view())?;
        let hidden = trunk_tape.output();
        let b = batch.len();
        let nw = PENULTIMATE * TWIST_DIM;
        let mut raw = Array2::zeros((b, TWIST_DIM));
        for i in 0..b {
            let g = flat.row(i);
            let h = hidden.row(i);
            for o in 0..TWIST_DIM {
                let w = g.slice(s![o * PENULTIMATE..(o + 1) * PENULTIMATE]);
                raw[(i, o)] = (w.dot(&h) + g[nw + o]).tanh();
            }
        }
        Ok(HpnForward {
            flat,
            hyper_tape,
            trunk_tape,
            raw,
        })
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let fwd = self.batch_forward(batch)?;
        Ok(twist_mse(&fwd.raw, &batch.target, self.v_max).0)
    }

    /// Loss plus gradients for the hypernetwork and trunk parameters. The
    /// trunk's own last-layer slot is never read, so its gradient stays zero.
    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let fwd = self.batch_forward(batch)?;
        let (loss, d_raw) = twist_mse(&fwd.raw, &batch.target, self.v_max);
        let hidden = fwd.trunk_tape.output();
        let b = batch.len();
        let nw = PENULTIMATE * TWIST_DIM;
        let mut d_flat = Array2::zeros((b, HYPER_OUT));
        let mut d_hidden = Array2::zeros((b, PENULTIMATE));
        for i in 0..b {
            let g = fwd.flat.row(i);
            let h = hidden.row(i);
            for o in 0..TWIST_DIM {
                let a = fwd.raw[(i, o)];
                let dz = d_raw[(i, o)] * (1.0 - a * a);
                if dz == 0.0 {
                    continue;
                }
                let mut dw = d_flat.slice_mut(s![i, o * PENULTIMATE..(o + 1) * PENULTIMATE]);
                dw.scaled_add(dz, &h);
                d_flat[(i, nw + o)] = dz;
                let w = g.slice(s![o * PENULTIMATE..(o + 1) * PENULTIMATE]);
                d_hidden.row_mut(i).scaled_add(dz, &w);
            }
        }
        let d_hyper = self.hyper.backward(&fwd.hyper_tape, d_flat.view())?.d_params;
        let mut d_trunk = vec![0.0; self.trunk.param_count()];
        self.trunk
            .backward_layers(&fwd.trunk_tape, d_hidden.view(), &mut d_trunk)?;
        Ok((loss, d_hyper, d_trunk))
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, d_hyper, d_trunk) = self.gradients(batch)?;
        if !self.freeze_hyper {
            self.hyper_adam.step(self.hyper.params_mut(), &d_hyper)?;
        }
        self.trunk_adam.step(self.trunk.params_mut(), &d_trunk)?;
        Ok(loss)
    }

    pub fn adam_steps(&self) -> u64 {
        self.trunk_adam.step_count()
    }
}

struct HpnForward {
    flat: Array2<f64>,
    hyper_tape: crate::nn::Tape,
    trunk_tape: crate::nn::Tape,
    raw: Array2<f64>,
}

// ---------------------------------------------------------------------------

/// Autoencoder controller: a frozen encoder compresses `s*` into an
/// 8-dimensional latent that is appended to the keypoint error.
#[derive(Clone, Debug)]
pub struct AeNc {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub controller: DenseNet,
    pub v_max: f64,
    pub frozen: bool,
    ae_adam: AdamState,
    controller_adam: AdamState,
}

impl AeNc {
    pub fn new<R: Rng + ?Sized>(n_points: usize, widths: &NetworkWidths, v_max: f64, adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let dim = 2 * n_points;
        let e1 = widths.ae_hidden;
        let encoder = DenseNet::init(chain(&[dim, e1, LATENT_DIM], &[Activation::Relu, Activation::Linear]), rng)?;
        let decoder = DenseNet::init(chain(&[LATENT_DIM, e1, dim], &[Activation::Relu, Activation::Linear]), rng)?;
        let controller = DenseNet::init(trunk_layers(dim + LATENT_DIM, widths.trunk_hidden), rng)?;
        Ok(Self::from_nets(encoder, decoder, controller, v_max, adam, false))
    }

    pub fn from_nets(encoder: DenseNet, decoder: DenseNet, controller: DenseNet, v_max: f64, adam: AdamConfig, frozen: bool) -> Self {
        let ae_adam = AdamState::new(adam, encoder.param_count() + decoder.param_count());
        let controller_adam = AdamState::new(adam, controller.param_count());
        Self {
            encoder,
            decoder,
            controller,
            v_max,
            frozen,
            ae_adam,
            controller_adam,
        }
    }

    pub fn latent(&self, desired: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder.forward_vec(desired)?.0)
    }

    fn controller_input(&self, error: ArrayView2<f64>, desired: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (z, _) = self.encoder.forward(desired)?;
        Ok(ndarray::concatenate(Axis(1), &[error, z.view()]).expect("matching batch"))
    }

    pub fn forward(&self, desired: &KeypointSet, current: &KeypointSet, k: &Intrinsics) -> Result<Twist> {
        let e = keypoint_error(desired, current, k)?;
        self.forward_with_latent(&self.latent(&desired.to_network_input(k))?, &e)
    }

    pub fn forward_with_latent(&self, latent: &[f64], error: &[f64]) -> Result<Twist> {
        let input: Vec<f64> = error.iter().chain(latent).copied().collect();
        let (raw, _) = self.controller.forward_vec(&input)?;
        Ok(twist_from_raw(&raw, self.v_max))
    }

    /// Mean squared reconstruction error on normalized desired keypoints.
    pub fn reconstruction_loss(&self, desired: ArrayView2<f64>) -> Result<f64> {
        let (z, _) = self.encoder.forward(desired)?;
        let (rec, _) = self.decoder.forward(z.view())?;
        let diff = rec - desired;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
    }

    /// Trains encoder and decoder on reconstruction, then freezes the
    /// encoder. Returns the per-step batch loss.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        desired: &[Vec<f64>],
        steps: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if desired.is_empty() {
            return Err(ServoError::EmptyDataset);
        }
        let dim = self.encoder.in_dim();
        let mut curve = Vec::with_capacity(steps);
        let n_enc = self.encoder.param_count();
        for _ in 0..steps {
            let mut x = Array2::zeros((batch_size, dim));
            for mut r in x.rows_mut() {
                let pick = &desired[rng.random_range(0..desired.len())];
                check_dim("autoencoder sample", dim, pick.len())?;
                r.assign(&ndarray::ArrayView1::from(pick.as_slice()));
            }
            let (z, enc_tape) = self.encoder.forward(x.view())?;
            let (rec, dec_tape) = self.decoder.forward(z.view())?;
            let diff = &rec - &x;
            let count = diff.len() as f64;
            curve.push(diff.iter().map(|d| d * d).sum::<f64>() / count);
            let d_rec = diff * (2.0 / count);
            let dec = self.decoder.backward(&dec_tape, d_rec.view())?;
            let enc = self.encoder.backward(&enc_tape, dec.d_input.view())?;
            let mut params: Vec<f64> = self.encoder.params().iter().chain(self.decoder.params()).copied().collect();
            let grads: Vec<f64> = enc.d_params.iter().chain(&dec.d_params).copied().collect();
            self.ae_adam.step(&mut params, &grads)?;
            self.encoder.params_mut().copy_from_slice(&params[..n_enc]);
            self.decoder.params_mut().copy_from_slice(&params[n_enc..]);
        }
        self.frozen = true;
        Ok(curve)
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let input = self.controller_input(batch.error.view(), batch.desired.view())?;
        let (raw, _) = self.controller.forward(input.view())?;
        Ok(twist_mse(&raw, &batch.target, self.v_max).0)
    }

    /// Controller-only gradients; the encoder is treated as a constant.
    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let input = self.controller_input(batch.error.view(), batch.desired.view())?;
        let (raw, tape) = self.controller.forward(input.view())?;
        let (loss, d_raw) = twist_mse(&raw, &batch.target, self.v_max);
        Ok((loss, self.controller.backward(&tape, d_raw.view())?.d_params))
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = self.gradients(batch)?;
        self.controller_adam.step(self.controller.params_mut(), &grads)?;
        Ok(loss)
    }

    pub fn adam_steps(&self) -> u64 {
        self.controller_adam.step_count()
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuralKind {
    Fcn,
    Ae,
    Hpn,
}

impl NeuralKind {
    pub fn tag(self) -> &'static str {
        match self {
            NeuralKind::Fcn => "fcn-nc",
            NeuralKind::Ae => "ae-nc",
            NeuralKind::Hpn => "hpn-nc",
        }
    }
}

#[derive(Clone, Debug)]
pub enum NeuralController {
    Fcn(FcnNc),
    Ae(AeNc),
    Hpn(HpnNc),
}

impl NeuralController {
    pub fn new<R: Rng + ?Sized>(
        kind: NeuralKind,
        n_points: usize,
        widths: &NetworkWidths,
        v_max: f64,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            NeuralKind::Fcn => Self::Fcn(FcnNc::new(n_points, widths, v_max, adam, rng)?),
            NeuralKind::Ae => Self::Ae(AeNc::new(n_points, widths, v_max, adam, rng)?),
            NeuralKind::Hpn => Self::Hpn(HpnNc::new(n_points, widths, v_max, adam, rng)?),
        })
    }

    pub fn kind(&self) -> NeuralKind {
        match self {
            Self::Fcn(_) => NeuralKind::Fcn,
            Self::Ae(_) => NeuralKind::Ae,
            Self::Hpn(_) => NeuralKind::Hpn,
        }
    }

    /// One Adam step on the batch MSE; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        match self {
            Self::Fcn(c) => c.train_step(batch),
            Self::Ae(c) => c.train_step(batch),
            Self::Hpn(c) => c.train_step(batch),
        }
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        match self {
            Self::Fcn(c) => c.batch_loss(batch),
            Self::Ae(c) => c.batch_loss(batch),
            Self::Hpn(c) => c.batch_loss(batch),
        }
    }

    /// Learning rate of the trainable (non-frozen) parts; for HPN-NC the
    /// trunk's, the hypernetwork running at [`HYPER_LR_SCALE`] times it.
    pub fn lr(&self) -> f64 {
        match self {
            Self::Fcn(c) => c.adam.config.lr,
            Self::Ae(c) => c.controller_adam.config.lr,
            Self::Hpn(c) => c.trunk_adam.config.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Self::Fcn(c) => c.adam.config.lr = lr,
            Self::Ae(c) => c.controller_adam.config.lr = lr,
            Self::Hpn(c) => {
                c.hyper_adam.config.lr = lr * HYPER_LR_SCALE;
                c.trunk_adam.config.lr = lr;
            }
        }
    }

    pub fn adam_steps(&self) -> u64 {
        match self {
            Self::Fcn(c) => c.adam_steps(),
            Self::Ae(c) => c.adam_steps(),
            Self::Hpn(c) => c.adam_steps(),
        }
    }

    pub fn total_param_count(&self) -> usize {
        match self {
            Self::Fcn(c) => c.net.param_count(),
            Self::Ae(c) => c.encoder.param_count() + c.decoder.param_count() + c.controller.param_count(),
            Self::Hpn(c) => c.total_param_count(),
        }
    }

    pub fn input_points(&self) -> usize {
        match self {
            Self::Fcn(c) => c.net.in_dim() / 2,
            Self::Ae(c) => c.encoder.in_dim() / 2,
            Self::Hpn(c) => c.trunk.in_dim() / 2,
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> ControllerCheckpoint {
        let mut nets = BTreeMap::new();
        let (v_max, frozen) = match self {
            Self::Fcn(c) => {
                nets.insert("controller".to_string(), NetRecord::from(&c.net));
                (c.v_max, false)
            }
            Self::Ae(c) => {
                nets.insert("encoder".to_string(), NetRecord::from(&c.encoder));
                nets.insert("decoder".to_string(), NetRecord::from(&c.decoder));
                nets.insert("controller".to_string(), NetRecord::from(&c.controller));
                (c.v_max, c.frozen)
            }
            Self::Hpn(c) => {
                nets.insert("hyper".to_string(), NetRecord::from(&c.hyper));
                nets.insert("trunk".to_string(), NetRecord::from(&c.trunk));
                (c.v_max, false)
            }
        };
        let mut counters = BTreeMap::new();
        counters.insert("adam_steps".to_string(), self.adam_steps());
        ControllerCheckpoint {
            kind: self.kind(),
            header: Header { seed, counters },
            v_max,
            frozen,
            nets,
        }
    }

    pub fn from_checkpoint(ckpt: ControllerCheckpoint, adam: AdamConfig) -> Result<Self> {
        let ControllerCheckpoint {
            kind,
            v_max,
            frozen,
            mut nets,
            ..
        } = ckpt;
        let mut take = |name: &str| {
            nets.remove(name)
                .ok_or_else(|| ServoError::MalformedCheckpoint(format!("missing network `{name}`")))
                .and_then(NetRecord::into_net)
        };
        Ok(match kind {
            NeuralKind::Fcn => Self::Fcn(FcnNc::from_net(take("controller")?, v_max, adam)),
            NeuralKind::Ae => Self::Ae(AeNc::from_nets(
                take("encoder")?,
                take("decoder")?,
                take("controller")?,
                v_max,
                adam,
                frozen,
            )),
            NeuralKind::Hpn => {
                let hyper = take("hyper")?;
                let trunk = take("trunk")?;
                check_dim("hypernetwork output", HYPER_OUT, hyper.out_dim())?;
                Self::Hpn(HpnNc::from_nets(hyper, trunk, v_max, adam))
            }
        })
    }

    /// Writes the checkpoint and returns its SHA-256.
    pub fn save(&self, path: &Path, seed: u64) -> Result<String> {
        checkpoint::write_json(path, &self.to_checkpoint(seed))
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        Self::from_checkpoint(checkpoint::read_json(path)?, adam)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerCheckpoint {
    pub kind: NeuralKind,
    pub header: Header,
    pub v_max: f64,
    #[serde(default)]
    pub frozen: bool,
    pub nets: BTreeMap<String, NetRecord>,
}

enum NeuralSession<'a> {
    Fcn(&'a FcnNc),
    Ae(&'a AeNc, Vec<f64>),
    Hpn(&'a HpnNc, Generated),
}

impl ControlSession for NeuralSession<'_> {
    fn command(&mut self, obs: &Observation<'_>) -> Result<Twist> {
        let k = obs.intrinsics;
        let e = keypoint_error(obs.desired, obs.current, k)?;
        match self {
            NeuralSession::Fcn(c) => c.forward(&e),
            NeuralSession::Ae(c, latent) => c.forward_with_latent(latent, &e),
            NeuralSession::Hpn(c, generated) => c.forward_generated(generated, &e),
        }
    }
}

impl Controller for NeuralController {
    fn label(&self) -> String {
        self.kind().tag().to_string()
    }

    fn param_count(&self) -> Option<usize> {
        Some(match self {
            Self::Fcn(c) => c.net.param_count(),
            Self::Ae(c) => c.controller.param_count(),
            Self::Hpn(c) => c.servo_param_count(),
        })
    }

    fn session<'a>(&'a self, desired: &KeypointSet, k: &Intrinsics) -> Result<Box<dyn ControlSession + 'a>> {
        check_dim("desired keypoints", self.input_points(), desired.len())?;
        Ok(match self {
            Self::Fcn(c) => Box::new(NeuralSession::Fcn(c)),
            Self::Ae(c) => Box::new(NeuralSession::Ae(c, c.latent(&desired.to_network_input(k))?)),
            // parameter inference happens once, before servoing
            Self::Hpn(c) => Box::new(NeuralSession::Hpn(c, c.generate(desired, k)?)),
        })
    }
}
