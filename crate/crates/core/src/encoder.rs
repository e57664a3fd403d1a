//! Feed-forward embedding network with exact reverse-mode gradients.
//!
//! The forward graph is `x → (W·h + b → act)* → W·h + b → u/‖u‖`; the final
//! ℓ2 normalization is part of the differentiated graph.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::math::{self, ZERO_NORM_EPS};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// One affine layer. `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| math::dot(row, x) + b)
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(DasError::ShapeMismatch(format!(
                "layer {}→{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl EncoderParams {
    /// Glorot-uniform weights `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(DasError::InvalidConfig(format!(
                "encoder needs at least input and output sizes, all positive (got {sizes:?})"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for x in &mut layer.weights {
                    *x = rng.uniform(-limit, limit);
                }
                layer
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// A single linear layer with identity weights: encoding reduces to
    /// ℓ2 normalization of the input.
    pub fn identity(dim: usize) -> Self {
        let mut layer = Layer::zeros(dim, dim);
        for i in 0..dim {
            layer.weights[i * dim + i] = 1.0;
        }
        Self {
            layers: vec![layer],
            activation: Activation::Identity,
        }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let p = Self { layers, activation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(DasError::ShapeMismatch("encoder has no layers".into()));
        }
        for l in &self.layers {
            l.check()?;
        }
        for w in self.layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(DasError::ShapeMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|x| !x.is_finite()))
        {
            return Err(DasError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    /// Same layer shapes with every entry zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
            activation: self.activation,
        }
    }

    /// Parameter tensors in a fixed order: weights then bias, per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradients share the parameter layout.
pub type EncoderGrads = EncoderParams;

/// Intermediates cached by [`encode`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `inputs[l][i]` is the input of layer `l` for sample `i`.
    inputs: Vec<Vec<Vec<f64>>>,
    /// Pre-activations of each hidden layer.
    pre_activations: Vec<Vec<Vec<f64>>>,
    /// Unit embeddings and the norms of the raw outputs they came from.
    outputs: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl ForwardTape {
    pub fn layer_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.outputs.len()
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
}

pub fn encode<V: AsRef<[f64]>>(
    params: &EncoderParams,
    inputs: &[V],
) -> Result<(Vec<Vec<f64>>, ForwardTape)> {
    if inputs.is_empty() {
        return Err(DasError::ShapeMismatch("empty batch".into()));
    }
    let n_layers = params.layers.len();
    let mut tape = ForwardTape {
        inputs: vec![Vec::with_capacity(inputs.len()); n_layers],
        pre_activations: vec![Vec::with_capacity(inputs.len()); n_layers - 1],
        outputs: Vec::with_capacity(inputs.len()),
        norms: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let x = x.as_ref();
        if x.len() != params.input_dim() {
            return Err(DasError::DimensionMismatch {
                expected: params.input_dim(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        for (l, layer) in params.layers.iter().enumerate() {
            let z = layer.forward(&h);
            tape.inputs[l].push(std::mem::take(&mut h));
            if l + 1 < n_layers {
                h = z.iter().map(|&zi| params.activation.apply(zi)).collect();
                tape.pre_activations[l].push(z);
            } else {
                h = z;
            }
        }
        let n = math::norm(&h);
        if !(n > ZERO_NORM_EPS) {
            return Err(DasError::ZeroNorm { norm: n });
        }
        tape.outputs.push(h.iter().map(|x| x / n).collect());
        tape.norms.push(n);
    }
    Ok((tape.outputs.clone(), tape))
}

/// Reverse pass: parameter gradients of `Σ_i ⟨grad_i, v_i⟩` where `v_i` are
/// the embeddings recorded on the tape.
pub fn backward<G: AsRef<[f64]>>(
    params: &EncoderParams,
    tape: &ForwardTape,
    grad_wrt_embeddings: &[G],
) -> Result<EncoderGrads> {
    if tape.layer_count() != params.layers.len() {
        return Err(DasError::ShapeMismatch(format!(
            "tape has {} layers, encoder has {}",
            tape.layer_count(),
            params.layers.len()
        )));
    }
    if grad_wrt_embeddings.len() != tape.batch_size() {
        return Err(DasError::ShapeMismatch(format!(
            "{} upstream gradients for a batch of {}",
            grad_wrt_embeddings.len(),
            tape.batch_size()
        )));
    }
    let mut grads = params.zeros_like();
    let last = params.layers.len() - 1;
    for (i, g) in grad_wrt_embeddings.iter().enumerate() {
        let g = g.as_ref();
        if g.len() != params.output_dim() {
            return Err(DasError::ShapeMismatch(format!(
                "upstream gradient of length {} for embeddings of dimension {}",
                g.len(),
                params.output_dim()
            )));
        }
        let mut delta = math::normalize_backward(&tape.outputs[i], tape.norms[i], g);
        for l in (0..=last).rev() {
            let layer = &params.layers[l];
            let input = &tape.inputs[l][i];
            let gl = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gl.bias[o] += d;
                let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut upstream = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (u, w) in upstream.iter_mut().zip(row) {
                    *u += d * w;
                }
            }
            let z = &tape.pre_activations[l - 1][i];
            delta = upstream
                .iter()
                .zip(z.iter().zip(input))
                .map(|(u, (&zi, &ai))| u * params.activation.derivative(zi, ai))
                .collect();
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerRule {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub rule: OptimizerRule,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub step: u64,
    /// First-moment (Adam) or velocity (SGD with momentum) accumulators.
    pub first: Vec<Vec<f64>>,
    /// Second-moment accumulators; empty for SGD.
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(rule: OptimizerRule, learning_rate: f64, momentum: f64, params: &EncoderParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let second = match rule {
            OptimizerRule::Adam => zeros.clone(),
            OptimizerRule::Sgd => Vec::new(),
        };
        Self {
            rule,
            learning_rate,
            momentum,
            step: 0,
            first: zeros,
            second,
        }
    }

    fn check(&self, params: &EncoderParams) -> Result<()> {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let first: Vec<usize> = self.first.iter().map(Vec::len).collect();
        let second_ok = match self.rule {
            OptimizerRule::Adam => self.second.iter().map(Vec::len).eq(shapes.iter().copied()),
            OptimizerRule::Sgd => true,
        };
        if first != shapes || !second_ok {
            return Err(DasError::ShapeMismatch(
                "optimizer accumulators do not match parameter shapes".into(),
            ));
        }
        Ok(())
    }
}

pub fn optimizer_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.layer_sizes() != grads.layer_sizes() || params.layers.len() != grads.layers.len() {
        return Err(DasError::ShapeMismatch(
            "gradient shapes do not match parameters".into(),
        ));
    }
    state.check(params)?;
    state.step += 1;
    let lr = state.learning_rate;
    let grad_tensors = grads.tensors();
    match state.rule {
        OptimizerRule::Sgd => {
            let mu = state.momentum;
            for ((p, g), vel) in params
                .tensors_mut()
                .into_iter()
                .zip(grad_tensors)
                .zip(state.first.iter_mut())
            {
                for ((pi, gi), vi) in p.iter_mut().zip(g).zip(vel.iter_mut()) {
                    if mu == 0.0 {
                        *pi -= lr * gi;
                    } else {
                        *vi = mu * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
        }
        OptimizerRule::Adam => {
            let t = state.step as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for (((p, g), m), v) in params
                .tensors_mut()
                .into_iter()
                .zip(grad_tensors)
                .zip(state.first.iter_mut())
                .zip(state.second.iter_mut())
            {
                for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *pi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned on-disk form of a trained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Per layer: `[weights (row-major), bias]` flattened into one array.
    pub params: Vec<Vec<f64>>,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub step: u64,
    /// Learnable boundary of the margin loss, when that loss was trained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_beta: Option<f64>,
}

impl Checkpoint {
    pub fn new(params: &EncoderParams, optimizer: &OptimizerState, seed: u64, step: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            layer_sizes: params.layer_sizes(),
            activation: params.activation,
            params: params
                .layers
                .iter()
                .map(|l| l.weights.iter().chain(&l.bias).copied().collect())
                .collect(),
            optimizer: optimizer.clone(),
            seed,
            step,
            margin_beta: None,
        }
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        let corrupt = |m: String| DasError::CorruptCheckpoint(m);
        if self.version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {}", self.version)));
        }
        if self.layer_sizes.len() < 2 || self.params.len() != self.layer_sizes.len() - 1 {
            return Err(corrupt("layer count does not match layer sizes".into()));
        }
        let layers = self
            .layer_sizes
            .windows(2)
            .zip(&self.params)
            .map(|(w, flat)| {
                let (inputs, outputs) = (w[0], w[1]);
                if flat.len() != inputs * outputs + outputs {
                    return Err(corrupt(format!(
                        "layer {inputs}→{outputs} has {} values",
                        flat.len()
                    )));
                }
                Ok(Layer {
                    inputs,
                    outputs,
                    weights: flat[..inputs * outputs].to_vec(),
                    bias: flat[inputs * outputs..].to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = EncoderParams {
            layers,
            activation: self.activation,
        };
        params.validate().map_err(|e| corrupt(e.to_string()))?;
        self.optimizer
            .check(&params)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| DasError::CorruptCheckpoint(e.to_string()))?;
        ck.encoder()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
