use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`; the ReLU
    /// derivative at zero is zero.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Offsets of one dense layer inside the flat parameter vector. The weight
/// block is row-major `outputs x inputs`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

/// Fully connected network with a hidden activation and a linear output
/// layer. All weights and biases live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

fn layout(sizes: &[usize]) -> (Vec<Layer>, usize) {
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    let mut offset = 0;
    for w in sizes.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        layers.push(Layer {
            inputs,
            outputs,
            weights: offset,
            bias: offset + inputs * outputs,
        });
        offset += inputs * outputs + outputs;
    }
    (layers, offset)
}

impl MlpState {
    /// Network with all parameters zero.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("layer sizes must have >= 2 positive entries, got {sizes:?}")));
        }
        let (layers, count) = layout(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
            params: vec![0.0; count],
        })
    }

    /// `inputs -> hidden x width -> outputs`.
    pub fn with_hidden(inputs: usize, hidden: usize, width: usize, outputs: usize, activation: Activation) -> Result<Self> {
        let mut sizes = vec![inputs];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(outputs);
        Self::zeros(&sizes, activation)
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, activation)?;
        if params.len() != mlp.params.len() {
            return Err(invalid(format!(
                "network with sizes {sizes:?} has {} parameters, got {}",
                mlp.params.len(),
                params.len()
            )));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
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

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Weight matrix (row-major, `outputs x inputs`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let layer = &self.layers[l];
        (
            &self.params[layer.weights..layer.bias],
            &self.params[layer.bias..layer.bias + layer.outputs],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let layer = self.layers[l];
        let (w, b) = self.params[layer.weights..layer.bias + layer.outputs].split_at_mut(layer.bias - layer.weights);
        (w, b)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// He-uniform initialization (weights in `+-sqrt(6 / fan_in)`, zero
    /// biases), reproducible per seed.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &self.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut self.params[layer.weights..layer.bias] {
                *w = rng.random_range(-limit..limit);
            }
            self.params[layer.bias..layer.bias + layer.outputs].fill(0.0);
        }
    }

    /// Evaluates the network on one input vector.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_size(), "network input size mismatch");
        let mut a = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &self.params[layer.weights..layer.bias];
            let b = &self.params[layer.bias..layer.bias + layer.outputs];
            let mut z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(&a) {
                        acc += wi * xi;
                    }
                    acc
                })
                .collect();
            if l < last {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        a
    }

    /// Raw network output for a reference point and time, without any
    /// input scaling or boundary ansatz.
    pub fn raw_forward(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let out = self.forward(&[x[0], x[1], x[2], t]);
        [out[0], out[1], out[2]]
    }

    /// Forward pass over a batch of inputs (`batch x input_size`,
    /// row-major), keeping the activations needed by [`Self::backward_batch`].
    pub fn forward_batch(&self, inputs: &[f64], cache: &mut BatchCache) {
        let n_in = self.input_size();
        assert_eq!(inputs.len() % n_in, 0, "batch input length mismatch");
        let batch = inputs.len() / n_in;
        cache.batch = batch;
        cache.acts.resize_with(self.layers.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(inputs);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let a = &prev[l];
            let z = &mut rest[0];
            z.clear();
            z.resize(batch * layer.outputs, 0.0);
            let w = &self.params[layer.weights..layer.bias];
            let bias = &self.params[layer.bias..layer.bias + layer.outputs];
            let hidden = l < last;
            for s in 0..batch {
                let x = &a[s * layer.inputs..(s + 1) * layer.inputs];
                let out = &mut z[s * layer.outputs..(s + 1) * layer.outputs];
                for o in 0..layer.outputs {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    let mut acc = bias[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    out[o] = if hidden { self.activation.apply(acc) } else { acc };
                }
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d output`
    /// for every batch row (`batch x output_size`).
    pub fn backward_batch(&self, cache: &mut BatchCache, d_out: &[f64], grad: &mut [f64]) {
        let batch = cache.batch;
        assert_eq!(d_out.len(), batch * self.output_size(), "output adjoint size mismatch");
        assert_eq!(grad.len(), self.params.len(), "gradient size mismatch");
        cache.delta.clear();
        cache.delta.extend_from_slice(d_out);
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let a = &cache.acts[l];
            let w = &self.params[layer.weights..layer.bias];
            {
                let (gw, gb) = grad[layer.weights..layer.bias + layer.outputs].split_at_mut(layer.bias - layer.weights);
                for s in 0..batch {
                    let d = &cache.delta[s * layer.outputs..(s + 1) * layer.outputs];
                    let x = &a[s * layer.inputs..(s + 1) * layer.inputs];
                    for o in 0..layer.outputs {
                        let dv = d[o];
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += dv * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            cache.next.clear();
            cache.next.resize(batch * layer.inputs, 0.0);
            for s in 0..batch {
                let d = &cache.delta[s * layer.outputs..(s + 1) * layer.outputs];
                let out = &mut cache.next[s * layer.inputs..(s + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (acc, wi) in out.iter_mut().zip(row) {
                        *acc += dv * wi;
                    }
                }
                let x = &a[s * layer.inputs..(s + 1) * layer.inputs];
                for (acc, xi) in out.iter_mut().zip(x) {
                    *acc *= self.activation.derivative_from_output(*xi);
                }
            }
            std::mem::swap(&mut cache.delta, &mut cache.next);
        }
    }
}

/// Activations retained between a batched forward and backward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl BatchCache {
    /// Network outputs of the last forward pass (`batch x output_size`).
    pub fn outputs(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}
