//! Finite-difference verification of the hand-written backward passes.
//!
//! Derivatives use the symmetric five-point stencil
//! `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`. When a relu unit changes
//! sign somewhere inside the stencil the step is shrunk until the activation
//! pattern is constant, so every entry is taken where the function is smooth.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::controllers::{Batch, HpnNc, NetworkWidths};
use crate::error::Result;
use crate::nn::{chain, Activation, AdamConfig, DenseNet, Tape};
use crate::sim::episode_rng;

pub const STEP: f64 = 1e-4;
/// Magnitude below which a gradient entry is compared absolutely.
pub const FLOOR: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn five_point(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Smallest step tried before accepting a stencil that straddles a kink.
const MIN_STEP: f64 = 1e-8;

/// Sign pattern of every relu pre-activation recorded on `tape`, which must
/// start at layer 0 of `net`.
pub fn relu_pattern(net: &DenseNet, tape: &Tape, out: &mut Vec<bool>) {
    for (spec, pre) in net.layers().iter().zip(tape.pre_activations()) {
        if spec.activation == Activation::Relu {
            out.extend(pre.iter().map(|z| *z > 0.0));
        }
    }
}

/// Five-point derivative of `f` at 0, where `f` also reports its relu
/// pattern.
pub fn smooth_derivative(mut f: impl FnMut(f64) -> (f64, Vec<bool>)) -> f64 {
    let base = f(0.0).1;
    let mut h = STEP;
    loop {
        let mut same = true;
        let mut vals = [0.0; 4];
        for (v, d) in vals.iter_mut().zip([2.0 * h, h, -h, -2.0 * h]) {
            let (y, pattern) = f(d);
            same &= pattern == base;
            *v = y;
        }
        if same || h / 10.0 < MIN_STEP {
            return (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h);
        }
        h /= 10.0;
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CheckSummary {
    pub label: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

impl CheckSummary {
    fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Default::default()
        }
    }

    fn push(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        self.max_rel_error = self.max_rel_error.max(rel_error(analytic, numeric));
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn randn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Indices to probe: all of them when `limit` is `None`.
fn probe_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Checks parameter and input gradients of `sum(c ⊙ net(x))`.
pub fn check_dense_net<R: Rng + ?Sized>(net: &DenseNet, batch: usize, rng: &mut R) -> Result<CheckSummary> {
    let x = randn(rng, batch, net.in_dim());
    let c = randn(rng, batch, net.out_dim());
    let (_, tape) = net.forward(x.view())?;
    let grads = net.backward(&tape, c.view())?;
    let mut summary = CheckSummary::new(format!(
        "mlp {}",
        net.layers()
            .iter()
            .map(|l| format!("{}{}", l.out_dim, format!("{:?}", l.activation)[..1].to_lowercase()))
            .collect::<Vec<_>>()
            .join("-")
    ));

    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = net.params()[i];
        let numeric = smooth_derivative(|d| {
            probe.params_mut()[i] = orig + d;
            let (y, tape) = probe.forward(x.view()).expect("shapes fixed");
            let mut pattern = Vec::new();
            relu_pattern(&probe, &tape, &mut pattern);
            ((&y * &c).sum(), pattern)
        });
        probe.params_mut()[i] = orig;
        summary.push(grads.d_params[i], numeric);
    }
    for (idx, &orig) in x.indexed_iter() {
        let mut xp = x.clone();
        let numeric = smooth_derivative(|d| {
            xp[idx] = orig + d;
            let (y, tape) = net.forward(xp.view()).expect("shapes fixed");
            let mut pattern = Vec::new();
            relu_pattern(net, &tape, &mut pattern);
            ((&y * &c).sum(), pattern)
        });
        summary.push(grads.d_input[idx], numeric);
    }
    Ok(summary)
}

/// A random dense network: 1 to 4 layers, widths 1 to 12, mixed activations.
pub fn random_architecture<R: Rng + ?Sized>(rng: &mut R) -> Result<DenseNet> {
    let depth = rng.random_range(1..=4);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=12)).collect();
    let acts: Vec<Activation> = (0..depth)
        .map(|_| match rng.random_range(0..3) {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            _ => Activation::Linear,
        })
        .collect();
    let mut net = DenseNet::init(chain(&widths, &acts), rng)?;
    // random biases so relu units are not all aligned at zero
    for p in net.params_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *p += 0.1 * z;
    }
    Ok(net)
}

fn random_batch<R: Rng + ?Sized>(rng: &mut R, n_points: usize, size: usize) -> Batch {
    Batch {
        error: randn(rng, size, 2 * n_points) * 0.2,
        desired: randn(rng, size, 2 * n_points) * 0.5,
        target: randn(rng, size, 6) * 0.05,
    }
}

fn hpn_loss_and_pattern(hpn: &HpnNc, data: &Batch) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let (_, tape) = hpn.hyper.forward(data.desired.view()).expect("shapes fixed");
    relu_pattern(&hpn.hyper, &tape, &mut pattern);
    let tape = hpn.trunk.forward_layers(0..2, data.error.view()).expect("shapes fixed");
    relu_pattern(&hpn.trunk, &tape, &mut pattern);
    (hpn.batch_loss(data).expect("shapes fixed"), pattern)
}

/// Checks the HPN-NC training loss gradient through hypernetwork and trunk.
/// `limit` caps the probed entries per network.
pub fn check_hpn<R: Rng + ?Sized>(
    widths: &NetworkWidths,
    n_points: usize,
    batch: usize,
    limit: Option<usize>,
    rng: &mut R,
) -> Result<CheckSummary> {
    let mut hpn = HpnNc::new(n_points, widths, 0.15, AdamConfig::default(), rng)?;
    // weights large enough that the generated layer drives the tanh off zero
    for p in hpn.hyper.params_mut() {
        *p *= 4.0;
    }
    let data = random_batch(rng, n_points, batch);
    let (_, d_hyper, d_trunk) = hpn.gradients(&data)?;
    let mut summary = CheckSummary::new(format!(
        "hpn-nc h{} g{}x{}",
        widths.trunk_hidden, widths.hyper_hidden[0], widths.hyper_hidden[1]
    ));
    for i in probe_indices(rng, hpn.hyper.param_count(), limit) {
        let orig = hpn.hyper.params()[i];
        let numeric = smooth_derivative(|d| {
            hpn.hyper.params_mut()[i] = orig + d;
            hpn_loss_and_pattern(&hpn, &data)
        });
        hpn.hyper.params_mut()[i] = orig;
        summary.push(d_hyper[i], numeric);
    }
    for i in probe_indices(rng, hpn.trunk.param_count(), limit) {
        let orig = hpn.trunk.params()[i];
        let numeric = smooth_derivative(|d| {
            hpn.trunk.params_mut()[i] = orig + d;
            hpn_loss_and_pattern(&hpn, &data)
        });
        hpn.trunk.params_mut()[i] = orig;
        summary.push(d_trunk[i], numeric);
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<CheckSummary>,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// 20 random architectures, a reduced-width HPN-NC probed exhaustively, and
/// the default-width HPN-NC probed on a random subset of entries.
pub fn run(seed: u64) -> Result<GradcheckReport> {
    let mut rng = episode_rng(seed, 0);
    let mut checks = Vec::new();
    for _ in 0..20 {
        let net = random_architecture(&mut rng)?;
        let b = rng.random_range(1..=5);
        checks.push(check_dense_net(&net, b, &mut rng)?);
    }
    let small = NetworkWidths {
        trunk_hidden: 16,
        hyper_hidden: [12, 10],
        ae_hidden: 8,
    };
    checks.push(check_hpn(&small, 4, 3, None, &mut rng)?);
    checks.push(check_hpn(&NetworkWidths::default(), 4, 4, Some(200), &mut rng)?);
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        checks,
        max_rel_error,
    })
}
