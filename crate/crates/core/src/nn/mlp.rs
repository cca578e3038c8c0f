use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with a row-major `out x in` weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            rows: output,
            cols: input,
            activation,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let weight = (0..input * output).map(|_| rng.random_range(-a..a)).collect();
        Self { rows: output, cols: input, activation, weight, bias: vec![0.0; output] }
    }

    pub fn from_parts(weight: Vec<f64>, bias: Vec<f64>, cols: usize, activation: Activation) -> Result<Self> {
        let rows = bias.len();
        if weight.len() != rows * cols {
            return Err(shape(format!(
                "weight has {} values, expected {rows}x{cols}",
                weight.len()
            )));
        }
        Ok(Self { rows, cols, activation, weight, bias })
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| {
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
            self.activation.apply(z)
        }));
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// A stack of dense layers with a group-level freeze flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub frozen: bool,
}

/// Activations recorded by [`Mlp::forward`]; `values[0]` is the input and
/// `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }
}

/// Per-layer parameter gradients, laid out like the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weight: m.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: m.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight).chain(self.bias.iter_mut().zip(&other.bias)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Flat view in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl Mlp {
    /// Builds an MLP over `sizes` (input first) with `hidden` activation on
    /// every layer but the last, which uses `output`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::glorot(w[0], w[1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        Self { layers, frozen: false }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        if layers.is_empty() {
            return Err(shape("an MLP needs at least one layer"));
        }
        Ok(Self { layers, frozen: false })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(shape(format!("input length {}, expected {}", x.len(), self.input_dim())));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward(values.last().unwrap(), &mut out);
            values.push(out);
        }
        let y = values.last().unwrap().clone();
        Ok((y, MlpCache { values }))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape(format!("input length {}, expected {}", x.len(), self.input_dim())));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Backpropagates `upstream` (dL/d output). Parameter gradients are
    /// accumulated into `grads` when given; the input gradient is returned.
    pub fn backward_into(&self, cache: &MlpCache, upstream: &[f64], mut grads: Option<&mut MlpGrads>) -> Result<Vec<f64>> {
        if cache.values.len() != self.layers.len() + 1 {
            return Err(shape("cache does not match this MLP"));
        }
        if upstream.len() != self.output_dim() {
            return Err(shape(format!(
                "upstream gradient length {}, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut g = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.values[k];
            let y = &cache.values[k + 1];
            // dL/dz through the activation
            for (gi, yi) in g.iter_mut().zip(y) {
                *gi *= layer.activation.derivative_from_output(*yi);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let gw = &mut grads.weight[k];
                for (row, gi) in gw.chunks_exact_mut(layer.cols).zip(&g) {
                    if *gi != 0.0 {
                        row.iter_mut().zip(x).for_each(|(w, xi)| *w += gi * xi);
                    }
                }
                grads.bias[k].iter_mut().zip(&g).for_each(|(b, gi)| *b += gi);
            }
            let mut gx = vec![0.0; layer.cols];
            for (row, gi) in layer.weight.chunks_exact(layer.cols).zip(&g) {
                if *gi != 0.0 {
                    gx.iter_mut().zip(row).for_each(|(d, w)| *d += gi * w);
                }
            }
            g = gx;
        }
        Ok(g)
    }

    /// Returns fresh parameter gradients and the input gradient.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let gx = self.backward_into(cache, upstream, Some(&mut grads))?;
        Ok((grads, gx))
    }

    /// All parameters, layer by layer, weight before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape(format!(
                "{} parameter values, expected {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&values[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }
}

impl MlpGrads {
    pub(crate) fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weight.iter().zip(&self.bias).flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }
}
