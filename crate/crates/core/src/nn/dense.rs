//! Dense multilayer networks with hand-written reverse-mode gradients.
//!
//! Layers are affine maps `y = x W + b` applied row-wise to a batch matrix
//! (rows are samples). Hidden layers use ReLU, the output layer is linear.
//! Weights are stored with shape `(in, out)` so a batch forward pass is a
//! single matrix product per layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{ensure_width, Error, Result};
use crate::nn::checkpoint::NamedArray;
use crate::nn::optim::ParamRef;
use crate::nn::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Activations recorded during a forward pass.
///
/// `inputs[l]` is the batch entering layer `l`; for `l > 0` it is the ReLU
/// output of layer `l - 1`, which also serves as the activation mask.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<Linear>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    name: String,
    layers: Vec<Linear>,
    recorded: Option<Trace>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.layers == other.layers
    }
}

impl DenseNet {
    /// Builds a network with uniform fan-in scaled initialization.
    ///
    /// `widths` lists every layer width including input and output, so a
    /// network with two hidden layers has four entries.
    pub fn new(name: impl Into<String>, widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeros(name, widths)?;
        let n = net.layers.len();
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let gain: f64 = if l + 1 < n { 2.0 } else { 1.0 };
            let limit = (3.0 * gain / layer.in_dim() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.uniform_range(-limit, limit));
        }
        Ok(net)
    }

    pub fn zeros(name: impl Into<String>, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("widths", "need at least input and output width"));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("widths[{pos}]"), "layer width must be positive"));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            name: name.into(),
            layers,
            recorded: None,
        })
    }

    pub fn from_layers(name: impl Into<String>, layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "empty network"));
        }
        for pair in layers.windows(2) {
            ensure_width("layer chain", pair[0].out_dim(), pair[1].in_dim())?;
        }
        for l in &layers {
            ensure_width("bias", l.out_dim(), l.bias.len())?;
        }
        Ok(Self {
            name: name.into(),
            layers,
            recorded: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim()];
        w.extend(self.layers.iter().map(Linear::out_dim));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Read-only batch inference; records nothing.
    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        ensure_width("net input", self.in_dim(), x.ncols())?;
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            h = affine(h.view(), layer);
            if l + 1 < n {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn infer_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.infer(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that returns the activations needed for a gradient pass.
    pub fn forward_traced(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Trace)> {
        ensure_width("net input", self.in_dim(), x.ncols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = affine(h.view(), layer);
            if l + 1 < n {
                out.mapv_inplace(relu);
            }
            inputs.push(h);
            h = out;
        }
        Ok((h, Trace { inputs }))
    }

    /// Forward pass that records its trace on the network for a later
    /// [`DenseNet::backward`].
    pub fn forward(&mut self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (out, trace) = self.forward_traced(x)?;
        self.recorded = Some(trace);
        Ok(out)
    }

    /// Consumes the recorded trace and returns parameter and input gradients.
    pub fn backward(&mut self, upstream: ArrayView2<'_, f64>) -> Result<(NetGrads, Array2<f64>)> {
        let trace = self
            .recorded
            .take()
            .ok_or_else(|| Error::NoForwardPass(self.name.clone()))?;
        let (grads, dx) = self.backward_traced(&trace, upstream, true)?;
        Ok((grads.expect("parameter gradients requested"), dx))
    }

    /// Gradient pass from an explicit trace. With `want_params = false` only
    /// the input gradient is produced, which is how a frozen network passes
    /// gradients through without accumulating any for its own parameters.
    pub fn backward_traced(
        &self,
        trace: &Trace,
        upstream: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<(Option<NetGrads>, Array2<f64>)> {
        ensure_width("net upstream", self.out_dim(), upstream.ncols())?;
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "trace for `{}` has {} layers, network has {}",
                self.name,
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = trace.inputs[0].nrows();
        ensure_width("net upstream rows", batch, upstream.nrows())?;

        let mut grads = want_params.then(|| Vec::with_capacity(self.layers.len()));
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let input = &trace.inputs[l];
            if let Some(g) = grads.as_mut() {
                g.push(Linear {
                    weight: input.t().dot(&delta),
                    bias: delta.sum_axis(Axis(0)),
                });
            }
            let mut dx = delta.dot(&self.layers[l].weight.t());
            if l > 0 {
                // input to layer l is relu(pre_{l-1}); derivative is 1 where positive.
                ndarray::Zip::from(&mut dx).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
        }
        let grads = grads.map(|mut g| {
            g.reverse();
            NetGrads { layers: g }
        });
        Ok((grads, delta))
    }

    /// Pairs each parameter tensor with its gradient for an optimizer step.
    pub fn param_refs<'a>(&'a mut self, grads: &'a NetGrads) -> Vec<ParamRef<'a>> {
        let name = self.name.clone();
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (l, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            out.push(ParamRef {
                name: format!("{name}.{l}.weight"),
                value: layer.weight.as_slice_mut().expect("standard layout"),
                grad: g.weight.as_slice().expect("standard layout"),
            });
            out.push(ParamRef {
                name: format!("{name}.{l}.bias"),
                value: layer.bias.as_slice_mut().expect("standard layout"),
                grad: g.bias.as_slice().expect("standard layout"),
            });
        }
        out
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Overwrites parameters from a flat vector in [`DenseNet::flatten_params`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_width("flat params", self.num_params(), flat.len())?;
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Bit-exact digest of all parameters.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.flatten_params() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex_digest(&h.finalize())
    }

    pub fn to_named(&self, prefix: &str) -> Vec<(String, NamedArray)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("{prefix}.{l}.weight"),
                NamedArray::from_array2(&layer.weight),
            ));
            out.push((
                format!("{prefix}.{l}.bias"),
                NamedArray::from_array1(&layer.bias),
            ));
        }
        out
    }

    pub fn from_named(
        name: impl Into<String>,
        prefix: &str,
        lookup: impl Fn(&str) -> Option<NamedArray>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for l in 0.. {
            let Some(w) = lookup(&format!("{prefix}.{l}.weight")) else {
                break;
            };
            let b = lookup(&format!("{prefix}.{l}.bias")).ok_or_else(|| {
                Error::Checkpoint(format!("missing array `{prefix}.{l}.bias`"))
            })?;
            layers.push(Linear {
                weight: w.into_array2()?,
                bias: b.into_array1()?,
            });
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!("no layers under `{prefix}`")));
        }
        Self::from_layers(name, layers)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn affine(x: ArrayView2<'_, f64>, layer: &Linear) -> Array2<f64> {
    let mut out = x.dot(&layer.weight);
    out += &layer.bias;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_net(widths: &[usize], seed: u64) -> DenseNet {
        let mut rng = RngStream::new(seed, "test/init");
        let mut net = DenseNet::new("net", widths, &mut rng).unwrap();
        // non-zero biases so their gradients are exercised too
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.uniform_range(-0.3, 0.3));
        }
        net
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = DenseNet::zeros("z", &[3, 5, 2]).unwrap();
        let y = net.infer_one(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let layer = Linear {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: array![0.0, 0.0],
        };
        let net = DenseNet::from_layers("id", vec![layer]).unwrap();
        assert_eq!(net.infer_one(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let net = DenseNet::zeros("z", &[3, 2]).unwrap();
        let err = net.infer_one(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 3, actual: 2, .. }));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut net = DenseNet::zeros("enc", &[2, 2]).unwrap();
        let up = Array2::zeros((1, 2));
        assert!(matches!(net.backward(up.view()), Err(Error::NoForwardPass(n)) if n == "enc"));
    }

    #[test]
    fn trace_is_consumed_by_backward() {
        let mut net = random_net(&[2, 3, 1], 1);
        net.forward(array![[0.1, 0.2]].view()).unwrap();
        net.backward(array![[1.0]].view()).unwrap();
        assert!(net.backward(array![[1.0]].view()).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = random_net(&[4, 6, 3], 2);
        net.forward(array![[0.3, -0.2, 0.9, 0.1]].view()).unwrap();
        let (g, dx) = net.backward(Array2::zeros((1, 3)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_gradient_is_input() {
        let layer = Linear {
            weight: array![[0.7]],
            bias: array![0.0],
        };
        let mut net = DenseNet::from_layers("lin", vec![layer]).unwrap();
        net.forward(array![[3.0]].view()).unwrap();
        let (g, dx) = net.backward(array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 3.0);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(dx[[0, 0]], 0.7);
    }

    /// Straight-line forward pass written independently of `affine`/`infer`.
    fn reference_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.layers().len();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, &hi) in h.iter().enumerate() {
                    acc += hi * layer.weight[[i, j]];
                }
                *out = if l + 1 < n { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        h
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let net = random_net(&[5, 7, 7, 3], 11);
        let x = [0.2, -0.4, 0.9, 0.0, -1.3];
        let got = net.infer_one(&x).unwrap();
        let want = reference_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn fixed_seed_forward_is_frozen() {
        // Golden values from `reference_forward` on the seed-11 network.
        let net = random_net(&[5, 7, 7, 3], 11);
        let got = net.infer_one(&[0.2, -0.4, 0.9, 0.0, -1.3]).unwrap();
        let want = [0.14515127208877937, 0.5053801718060029, -0.07460314815146564];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut net = random_net(&[3, 6, 5, 2], 5);
        let x = array![[0.3, -0.7, 1.1], [-0.2, 0.4, 0.05]];
        let w = array![[0.5, -1.0], [2.0, 0.25]];
        // loss = sum(w ⊙ f(x))
        net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(w.view()).unwrap();
        let loss = |n: &DenseNet, x: &Array2<f64>| (n.infer(x.view()).unwrap() * &w).sum();

        let analytic = g.flatten();
        let base = net.flatten_params();
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(base.len());
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe, &x);
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = loss(&probe, &x);
            numeric.push((up - down) / (2.0 * h));
        }
        assert!(crate::nn::rel_error(&analytic, &numeric) < 1e-4);

        let mut num_dx = Vec::new();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            let up = loss(&net, &xp);
            xp.as_slice_mut().unwrap()[i] -= 2.0 * h;
            let down = loss(&net, &xp);
            num_dx.push((up - down) / (2.0 * h));
        }
        assert!(crate::nn::rel_error(dx.as_slice().unwrap(), &num_dx) < 1e-4);
    }

    #[test]
    fn input_only_backward_matches_full() {
        let net = random_net(&[3, 4, 2], 9);
        let x = array![[0.1, 0.2, -0.3]];
        let (_, trace) = net.forward_traced(x.view()).unwrap();
        let up = array![[1.0, -1.0]];
        let (g, dx1) = net.backward_traced(&trace, up.view(), false).unwrap();
        assert!(g.is_none());
        let (_, dx2) = net.backward_traced(&trace, up.view(), true).unwrap();
        assert_eq!(dx1, dx2);
    }
}
