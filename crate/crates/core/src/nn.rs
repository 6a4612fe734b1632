//! Fully connected networks with a linear output layer, stored as one flat
//! parameter vector so that Jacobians and kernels can index parameters
//! uniformly.
//!
//! Parameter layout per layer: the `out × in` weight block in row-major order,
//! immediately followed by the `out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_bias", skip_serializing_if = "is_true")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl NetworkSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            hidden,
            activation,
            bias: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network widths must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Same architecture with every bias term removed.
    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Layer widths including input and output: `[D, h1, …, C]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|pair| {
                let l = LayerLayout {
                    rows: pair[1],
                    cols: pair[0],
                    offset,
                    bias: self.bias,
                };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(LayerLayout::len).sum()
    }
}

/// Position of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    /// Output width.
    pub rows: usize,
    /// Input width.
    pub cols: usize,
    pub offset: usize,
    #[serde(default = "default_bias", skip_serializing_if = "is_true")]
    pub bias: bool,
}

impl LayerLayout {
    pub fn len(&self) -> usize {
        (self.cols + usize::from(self.bias)) * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn bias_offset(&self) -> usize {
        self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    values: Vec<f64>,
    spec: NetworkSpec,
    layout: Vec<LayerLayout>,
}

impl Weights {
    pub fn from_values(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let p: usize = layout.iter().map(LayerLayout::len).sum();
        if values.len() != p {
            return Err(dim_err(format!(
                "network expects {p} parameters, got {}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            spec,
            layout,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let p = spec.num_params();
        Self::from_values(spec, vec![0.0; p])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Uniform `±1/√fan_in` weights, zero biases; deterministic in `(spec, seed)`.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<Weights> {
    let mut w = Weights::zeros(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = w.layout.clone();
    for l in layout {
        let bound = 1.0 / (l.cols as f64).sqrt();
        for v in &mut w.values[l.offset..l.bias_offset()] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(w)
}

/// Per-layer activations retained for backpropagation.
pub(crate) struct ForwardCache {
    /// `activations[0]` is the input; `activations[l+1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

pub(crate) fn forward_cached(w: &Weights, x: &[f64]) -> ForwardCache {
    let n_layers = w.layout.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(x.to_vec());
    for (li, l) in w.layout.iter().enumerate() {
        let input = &activations[li];
        let weights = &w.values[l.offset..l.bias_offset()];
        let biases = &w.values[l.bias_offset()..l.offset + l.len()];
        let last = li + 1 == n_layers;
        let out: Vec<f64> = (0..l.rows)
            .map(|r| {
                let row = &weights[r * l.cols..(r + 1) * l.cols];
                let mut z = if l.bias { biases[r] } else { 0.0 };
                for (a, b) in row.iter().zip(input) {
                    z += a * b;
                }
                if last {
                    z
                } else {
                    w.spec.activation.apply(z)
                }
            })
            .collect();
        activations.push(out);
    }
    ForwardCache { activations }
}

/// Accumulates `grad += (∂f/∂w)ᵀ · output_grad` for the sample in `cache`.
pub(crate) fn backprop_into(w: &Weights, cache: &ForwardCache, output_grad: &[f64], grad: &mut [f64]) {
    let act = w.spec.activation;
    let mut delta = output_grad.to_vec();
    for li in (0..w.layout.len()).rev() {
        let l = w.layout[li];
        let input = &cache.activations[li];
        let bias_off = l.bias_offset();
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let g = &mut grad[l.offset + r * l.cols..l.offset + (r + 1) * l.cols];
            for (gi, &a) in g.iter_mut().zip(input) {
                *gi += d * a;
            }
            if l.bias {
                grad[bias_off + r] += d;
            }
        }
        if li == 0 {
            break;
        }
        let weights = &w.values[l.offset..bias_off];
        let mut prev = vec![0.0; l.cols];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (p, &wv) in prev.iter_mut().zip(&weights[r * l.cols..(r + 1) * l.cols]) {
                *p += d * wv;
            }
        }
        for (p, &a) in prev.iter_mut().zip(&cache.activations[li]) {
            *p *= act.derivative_from_output(a);
        }
        delta = prev;
    }
}

/// Network output for a single input vector.
pub fn forward_one(w: &Weights, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.input_dim() {
        return Err(dim_err(format!(
            "input has {} features, network expects {}",
            x.len(),
            w.input_dim()
        )));
    }
    Ok(forward_cached(w, x).activations.pop().expect("output layer"))
}

/// Row-wise network outputs (`N × C`); the output layer is linear.
pub fn forward(w: &Weights, x: &Matrix) -> Result<Matrix> {
    if x.rows() > 0 && x.cols() != w.input_dim() {
        return Err(dim_err(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            w.input_dim()
        )));
    }
    let c = w.output_dim();
    let mut out = Matrix::zeros(x.rows(), c);
    for (i, row) in x.row_iter().enumerate() {
        let f = forward_cached(w, row);
        out.row_mut(i).copy_from_slice(f.output());
    }
    Ok(out)
}

/// Exact `C × P` Jacobian of the outputs at `x`, one reverse sweep per output.
pub fn jacobian(w: &Weights, x: &[f64]) -> Result<Matrix> {
    if x.len() != w.input_dim() {
        return Err(dim_err(format!(
            "input has {} features, network expects {}",
            x.len(),
            w.input_dim()
        )));
    }
    Ok(jacobian_unchecked(w, x))
}

pub(crate) fn jacobian_unchecked(w: &Weights, x: &[f64]) -> Matrix {
    let c = w.output_dim();
    let p = w.num_params();
    let cache = forward_cached(w, x);
    let mut jac = Matrix::zeros(c, p);
    let mut seed = vec![0.0; c];
    for k in 0..c {
        seed[k] = 1.0;
        backprop_into(w, &cache, &seed, jac.row_mut(k));
        seed[k] = 0.0;
    }
    jac
}
