use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ServoError};

/// `x · wᵀ + b`. Single rows take a matrix-vector product: the blocked
/// matrix product allocates large packing buffers per call, which fragments
/// the heap during long rollouts.
fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut z = if x.nrows() == 1 {
        w.dot(&x.row(0)).insert_axis(Axis(0))
    } else {
        x.dot(&w.t())
    };
    z += &b;
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation, given pre-activation `z`
    /// and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Builds a chain of layers from widths and one activation per layer.
pub fn chain(widths: &[usize], activations: &[Activation]) -> Vec<LayerSpec> {
    assert_eq!(widths.len(), activations.len() + 1);
    widths
        .windows(2)
        .zip(activations)
        .map(|(w, &a)| LayerSpec::new(w[0], w[1], a))
        .collect()
}

/// Per-layer views into the flat parameter vector.
#[derive(Debug)]
pub struct LayerView<'a> {
    pub spec: LayerSpec,
    /// `out_dim × in_dim`
    pub weight: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
}

/// Activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    layers: Range<usize>,
    /// Input to each layer, batch-major.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    /// Output of the last recorded layer.
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.inputs[0]
    }

    pub fn batch(&self) -> usize {
        self.output.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_params: Vec<f64>,
    pub d_input: Array2<f64>,
}

/// Fully connected network with a flat parameter vector laid out as
/// `[W₁ (row-major), b₁, W₂, b₂, ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl DenseNet {
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        Self::validate(&layers)?;
        let n = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self {
            layers,
            params: vec![0.0; n],
        })
    }

    /// He-uniform weights for relu layers, Xavier-uniform otherwise; zero biases.
    pub fn init<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut offset = 0;
        for spec in net.layers.clone() {
            let bound = match spec.activation {
                Activation::Relu => (6.0 / spec.in_dim as f64).sqrt(),
                Activation::Tanh | Activation::Linear => {
                    (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt()
                }
            };
            let nw = spec.in_dim * spec.out_dim;
            for w in &mut net.params[offset..offset + nw] {
                *w = rng.random_range(-bound..bound);
            }
            offset += spec.param_count();
        }
        Ok(net)
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        Self::validate(&layers)?;
        let n: usize = layers.iter().map(LayerSpec::param_count).sum();
        check_dim("parameter vector", n, params.len())?;
        Ok(Self { layers, params })
    }

    fn validate(layers: &[LayerSpec]) -> Result<()> {
        if layers.is_empty() {
            return Err(ServoError::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(ServoError::InvalidConfig(format!("layer {i} has a zero dimension")));
            }
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].out_dim, pair[1].in_dim)?;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Offset of layer `i`'s weight block in the flat vector.
    pub fn layer_offset(&self, i: usize) -> usize {
        self.layers[..i].iter().map(LayerSpec::param_count).sum()
    }

    /// Parameter range owned by layer `i` (weights then bias).
    pub fn layer_range(&self, i: usize) -> Range<usize> {
        let start = self.layer_offset(i);
        start..start + self.layers[i].param_count()
    }

    pub fn layer(&self, i: usize) -> LayerView<'_> {
        let spec = self.layers[i];
        let off = self.layer_offset(i);
        let nw = spec.in_dim * spec.out_dim;
        let weight = ArrayView2::from_shape((spec.out_dim, spec.in_dim), &self.params[off..off + nw])
            .expect("layer shape matches parameter layout");
        let bias = ArrayView1::from(&self.params[off + nw..off + nw + spec.out_dim]);
        LayerView { spec, weight, bias }
    }

    pub fn split_params(&self) -> Vec<LayerView<'_>> {
        (0..self.layers.len()).map(|i| self.layer(i)).collect()
    }

    /// Overwrites layer `i` with the given weight (`out × in`) and bias.
    pub fn set_layer(&mut self, i: usize, weight: ArrayView2<f64>, bias: ArrayView1<f64>) -> Result<()> {
        let spec = self.layers[i];
        check_dim("layer weight rows", spec.out_dim, weight.nrows())?;
        check_dim("layer weight cols", spec.in_dim, weight.ncols())?;
        check_dim("layer bias", spec.out_dim, bias.len())?;
        let off = self.layer_offset(i);
        let nw = spec.in_dim * spec.out_dim;
        for (dst, src) in self.params[off..off + nw].iter_mut().zip(weight.iter()) {
            *dst = *src;
        }
        for (dst, src) in self.params[off + nw..off + nw + spec.out_dim].iter_mut().zip(bias.iter()) {
            *dst = *src;
        }
        Ok(())
    }

    /// Batched forward over all layers; rows of `input` are samples.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        let tape = self.forward_layers(0..self.layers.len(), input)?;
        Ok((tape.output.clone(), tape))
    }

    pub fn forward_vec(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, tape) = self.forward(x)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    /// Forward through a contiguous range of layers.
    pub fn forward_layers(&self, layers: Range<usize>, input: ArrayView2<f64>) -> Result<Tape> {
        let first = self.layers[layers.start];
        check_dim("network input", first.in_dim, input.ncols())?;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut x = input.to_owned();
        for i in layers.clone() {
            let view = self.layer(i);
            let z = affine(x.view(), view.weight, view.bias);
            let act = view.spec.activation;
            let a = z.mapv(|v| act.apply(v));
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(Tape {
            layers,
            inputs,
            pre,
            output: x,
        })
    }

    /// Reverse pass for a full-network tape.
    pub fn backward(&self, tape: &Tape, d_output: ArrayView2<f64>) -> Result<GradientBundle> {
        let mut d_params = vec![0.0; self.params.len()];
        let d_input = self.backward_layers(tape, d_output, &mut d_params)?;
        Ok(GradientBundle { d_params, d_input })
    }

    pub fn backward_vec(&self, tape: &Tape, d_output: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = ArrayView2::from_shape((1, d_output.len()), d_output).expect("row vector");
        let g = self.backward(tape, d)?;
        Ok((g.d_params, g.d_input.into_raw_vec_and_offset().0))
    }

    /// Reverse pass over the layers recorded in `tape`, accumulating parameter
    /// gradients into `d_params` (full-network layout). Returns the gradient
    /// with respect to the tape's input.
    pub fn backward_layers(
        &self,
        tape: &Tape,
        d_output: ArrayView2<f64>,
        d_params: &mut [f64],
    ) -> Result<Array2<f64>> {
        check_dim("gradient buffer", self.params.len(), d_params.len())?;
        check_dim("output gradient batch", tape.batch(), d_output.nrows())?;
        check_dim("output gradient width", tape.output.ncols(), d_output.ncols())?;
        let mut grad = d_output.to_owned();
        let mut next_out = tape.output.view();
        for (k, i) in tape.layers.clone().enumerate().rev() {
            let spec = self.layers[i];
            let z = &tape.pre[k];
            let act = spec.activation;
            // dL/dz
            ndarray::Zip::from(&mut grad)
                .and(z)
                .and(next_out)
                .for_each(|g, &z, &a| *g *= act.derivative(z, a));
            let x = &tape.inputs[k];
            let off = self.layer_offset(i);
            let nw = spec.in_dim * spec.out_dim;
            {
                let (w_slot, rest) = d_params[off..off + spec.param_count()].split_at_mut(nw);
                let mut dw = ArrayViewMut2::from_shape((spec.out_dim, spec.in_dim), w_slot)
                    .expect("layer shape matches parameter layout");
                dw += &grad.t().dot(x);
                for (db, col) in rest.iter_mut().zip(grad.axis_iter(Axis(1))) {
                    *db += col.sum();
                }
            }
            let view = self.layer(i);
            grad = grad.dot(&view.weight);
            if k > 0 {
                next_out = tape.inputs[k].view();
            }
        }
        Ok(grad)
    }

    /// A view of this network whose last layer is replaced by `weight`/`bias`.
    pub fn overlay_last_layer<'a>(
        &'a self,
        weight: ArrayView2<'a, f64>,
        bias: ArrayView1<'a, f64>,
    ) -> Result<OverlaidNet<'a>> {
        let last = self.layers[self.layers.len() - 1];
        check_dim("overlay weight rows", last.out_dim, weight.nrows())?;
        check_dim("overlay weight cols", last.in_dim, weight.ncols())?;
        check_dim("overlay bias", last.out_dim, bias.len())?;
        Ok(OverlaidNet {
            base: self,
            weight,
            bias,
        })
    }
}

/// Gradients of an overlaid forward: trunk parameters (last-layer slot left
/// at zero), the supplied last layer, and the input.
#[derive(Clone, Debug)]
pub struct OverlayGradients {
    pub d_trunk: Vec<f64>,
    pub d_weight: Array2<f64>,
    pub d_bias: Array1<f64>,
    pub d_input: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct OverlayTape {
    trunk: Option<Tape>,
    hidden: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

impl OverlayTape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Network whose final layer comes from an external supplier.
#[derive(Clone, Debug)]
pub struct OverlaidNet<'a> {
    base: &'a DenseNet,
    weight: ArrayView2<'a, f64>,
    bias: ArrayView1<'a, f64>,
}

impl<'a> OverlaidNet<'a> {
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, OverlayTape)> {
        let n = self.base.layers.len();
        let (trunk, hidden) = if n > 1 {
            let t = self.base.forward_layers(0..n - 1, input)?;
            let h = t.output.clone();
            (Some(t), h)
        } else {
            check_dim("network input", self.base.in_dim(), input.ncols())?;
            (None, input.to_owned())
        };
        let act = self.base.layers[n - 1].activation;
        let pre = affine(hidden.view(), self.weight, self.bias);
        let output = pre.mapv(|v| act.apply(v));
        Ok((
            output.clone(),
            OverlayTape {
                trunk,
                hidden,
                pre,
                output,
            },
        ))
    }

    pub fn backward(&self, tape: &OverlayTape, d_output: ArrayView2<f64>) -> Result<OverlayGradients> {
        check_dim("output gradient batch", tape.output.nrows(), d_output.nrows())?;
        check_dim("output gradient width", tape.output.ncols(), d_output.ncols())?;
        let n = self.base.layers.len();
        let act = self.base.layers[n - 1].activation;
        let mut dz = d_output.to_owned();
        ndarray::Zip::from(&mut dz)
            .and(&tape.pre)
            .and(&tape.output)
            .for_each(|g, &z, &a| *g *= act.derivative(z, a));
        let d_weight = dz.t().dot(&tape.hidden);
        let d_bias = dz.sum_axis(Axis(0));
        let d_hidden = dz.dot(&self.weight);
        let mut d_trunk = vec![0.0; self.base.params.len()];
        let d_input = match &tape.trunk {
            Some(t) => self.base.backward_layers(t, d_hidden.view(), &mut d_trunk)?,
            None => d_hidden,
        };
        Ok(OverlayGradients {
            d_trunk,
            d_weight,
            d_bias,
            d_input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let net = DenseNet::zeros(chain(&[4, 8, 8, 3], &[Activation::Relu, Activation::Relu, Activation::Tanh])).unwrap();
        let (out, _) = net.forward_vec(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let mut net = DenseNet::zeros(vec![LayerSpec::new(3, 3, Activation::Linear)]).unwrap();
        net.set_layer(0, Array2::eye(3).view(), Array1::zeros(3).view()).unwrap();
        let (out, _) = net.forward_vec(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn hand_computed_two_layer() {
        // h = relu([[1, 2], [-1, 0.5]] x + [0.5, 0.25]) ; y = tanh([3, -1] h + [-0.5])
        // x = (1, 0): h = relu(1.5, -0.75) = (1.5, 0); y = tanh(4.0)
        let net = DenseNet::from_params(
            chain(&[2, 2, 1], &[Activation::Relu, Activation::Tanh]),
            vec![1.0, 2.0, -1.0, 0.5, 0.5, 0.25, 3.0, -1.0, -0.5],
        )
        .unwrap();
        let (out, _) = net.forward_vec(&[1.0, 0.0]).unwrap();
        assert!((out[0] - 4.0f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = DenseNet::zeros(chain(&[4, 2], &[Activation::Linear])).unwrap();
        assert!(matches!(net.forward_vec(&[1.0, 2.0]), Err(ServoError::DimensionMismatch { .. })));
        assert!(DenseNet::from_params(chain(&[4, 2], &[Activation::Linear]), vec![0.0; 3]).is_err());
        assert!(DenseNet::zeros(vec![LayerSpec::new(2, 3, Activation::Relu), LayerSpec::new(4, 1, Activation::Relu)]).is_err());
    }

    #[test]
    fn zero_output_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::init(chain(&[3, 5, 2], &[Activation::Relu, Activation::Tanh]), &mut rng).unwrap();
        let (_, tape) = net.forward_vec(&[0.1, 0.2, 0.3]).unwrap();
        let (dp, dx) = net.backward_vec(&tape, &[0.0, 0.0]).unwrap();
        assert!(dp.iter().all(|g| *g == 0.0));
        assert!(dx.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn linear_weight_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::init(vec![LayerSpec::new(3, 2, Activation::Linear)], &mut rng).unwrap();
        let x = [0.5, -1.5, 2.0];
        let d = [0.7, -0.3];
        let (_, tape) = net.forward_vec(&x).unwrap();
        let (dp, _) = net.backward_vec(&tape, &d).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((dp[i * 3 + j] - d[i] * x[j]).abs() < 1e-15);
            }
            assert_eq!(dp[6 + i], d[i]);
        }
    }

    #[test]
    fn layout_round_trips_through_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::init(chain(&[3, 4, 2], &[Activation::Relu, Activation::Linear]), &mut rng).unwrap();
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        let mut copy = DenseNet::zeros(net.layers().to_vec()).unwrap();
        for (i, view) in net.split_params().iter().enumerate() {
            copy.set_layer(i, view.weight, view.bias).unwrap();
        }
        assert_eq!(copy, net);
    }

    #[test]
    fn overlay_with_own_last_layer_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DenseNet::init(chain(&[4, 6, 5, 3], &[Activation::Relu, Activation::Relu, Activation::Tanh]), &mut rng).unwrap();
        let x = array![[0.1, -0.4, 0.9, 0.3], [1.0, 0.0, -1.0, 0.5]];
        let (plain, _) = net.forward(x.view()).unwrap();
        let last = net.layer(2);
        let overlaid = net.overlay_last_layer(last.weight, last.bias).unwrap();
        let (out, _) = overlaid.forward(x.view()).unwrap();
        assert_eq!(out, plain);

        let zw = Array2::zeros((3, 5));
        let zb = Array1::zeros(3);
        let (zero, _) = net.overlay_last_layer(zw.view(), zb.view()).unwrap().forward(x.view()).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(net.overlay_last_layer(zw.view(), Array1::zeros(2).view()).is_err());
    }

    #[test]
    fn overlay_leaves_trunk_last_slot_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = DenseNet::init(chain(&[4, 6, 3], &[Activation::Relu, Activation::Tanh]), &mut rng).unwrap();
        let w = Array2::from_elem((3, 6), 0.2);
        let b = Array1::from_elem(3, -0.1);
        let o = net.overlay_last_layer(w.view(), b.view()).unwrap();
        let x = array![[0.3, 0.1, -0.2, 0.8]];
        let (_, tape) = o.forward(x.view()).unwrap();
        let g = o.backward(&tape, array![[1.0, -1.0, 0.5]].view()).unwrap();
        let last = net.layer_range(1);
        assert!(g.d_trunk[last].iter().all(|v| *v == 0.0));
        assert!(g.d_trunk[net.layer_range(0)].iter().any(|v| *v != 0.0));
    }
}
