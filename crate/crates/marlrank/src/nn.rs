//! Minimal dense network engine: affine layers, ReLU/tanh, softmax,
//! manual reverse-mode gradients, finite-difference checking, SGD and
//! parameter serialization.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PARAMS_FORMAT_VERSION: u32 = 1;
pub const NUM_LEVELS: usize = 3;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected input of {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite gradient encountered (training diverged)")]
    NonFiniteGradient,
    #[error("parameter file version {got} unsupported (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("parameter file shape inconsistent: {0}")]
    BadShape(String),
    #[error("failed to read/write parameters: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }
    /// Derivative expressed from the pre-activation.
    fn derive(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// One affine layer, weights stored row-major (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LayerParams {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform initialization: U(-b, b) with b = sqrt(6/(fan_in+fan_out)).
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        LayerParams {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.in_dim {
            return Err(NnError::DimMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        let mut out = self.bias.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_v += acc;
        }
        Ok(out)
    }

    /// Accumulate `d_out ⊗ x` into weight grads, `d_out` into bias grads,
    /// and return the gradient with respect to the input.
    pub fn backward_into(&self, x: &[f64], d_out: &[f64], grad: &mut LayerParams) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(d_out.len(), self.out_dim);
        let mut d_in = vec![0.0; self.in_dim];
        for (o, &g) in d_out.iter().enumerate() {
            grad.bias[o] += g;
            let row = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let w_row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                row[i] += g * x[i];
                d_in[i] += g * w_row[i];
            }
        }
        d_in
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }
}

/// All trainable weights: the one-layer similarity head over the pair
/// encoding, and the two-hidden-layer policy network over observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version: u32,
    pub feature_dim: usize,
    pub k: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// 4F -> 1, sigmoid head.
    pub similarity: LayerParams,
    pub hidden1: LayerParams,
    pub hidden2: LayerParams,
    /// hidden -> 3 softmax head.
    pub output: LayerParams,
}

impl ModelParams {
    pub fn obs_dim(feature_dim: usize, k: usize) -> usize {
        2 * feature_dim + 2 * k
    }

    pub fn zeros(feature_dim: usize, k: usize, hidden: usize, activation: Activation) -> Self {
        let obs = Self::obs_dim(feature_dim, k);
        ModelParams {
            version: PARAMS_FORMAT_VERSION,
            feature_dim,
            k,
            hidden,
            activation,
            similarity: LayerParams::zeros(4 * feature_dim, 1),
            hidden1: LayerParams::zeros(obs, hidden),
            hidden2: LayerParams::zeros(hidden, hidden),
            output: LayerParams::zeros(hidden, NUM_LEVELS),
        }
    }

    pub fn init<R: Rng>(
        feature_dim: usize,
        k: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let obs = Self::obs_dim(feature_dim, k);
        ModelParams {
            version: PARAMS_FORMAT_VERSION,
            feature_dim,
            k,
            hidden,
            activation,
            similarity: LayerParams::glorot(4 * feature_dim, 1, rng),
            hidden1: LayerParams::glorot(obs, hidden, rng),
            hidden2: LayerParams::glorot(hidden, hidden, rng),
            output: LayerParams::glorot(hidden, NUM_LEVELS, rng),
        }
    }

    pub fn grad_buffer(&self) -> GradientBuffer {
        GradientBuffer {
            similarity: LayerParams::zeros(self.similarity.in_dim, self.similarity.out_dim),
            hidden1: LayerParams::zeros(self.hidden1.in_dim, self.hidden1.out_dim),
            hidden2: LayerParams::zeros(self.hidden2.in_dim, self.hidden2.out_dim),
            output: LayerParams::zeros(self.output.in_dim, self.output.out_dim),
        }
    }

    fn layers(&self) -> [&LayerParams; 4] {
        [&self.similarity, &self.hidden1, &self.hidden2, &self.output]
    }

    fn layers_mut(&mut self) -> [&mut LayerParams; 4] {
        [
            &mut self.similarity,
            &mut self.hidden1,
            &mut self.hidden2,
            &mut self.output,
        ]
    }

    /// Flattened view of every trainable scalar, similarity first.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in self.layers() {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        debug_assert_eq!(pos, flat.len());
    }
}

/// Gradient accumulator, shape-compatible with one `ModelParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub similarity: LayerParams,
    pub hidden1: LayerParams,
    pub hidden2: LayerParams,
    pub output: LayerParams,
}

impl GradientBuffer {
    pub fn scale(&mut self, c: f64) {
        for l in [
            &mut self.similarity,
            &mut self.hidden1,
            &mut self.hidden2,
            &mut self.output,
        ] {
            for w in l.weights.iter_mut() {
                *w *= c;
            }
            for b in l.bias.iter_mut() {
                *b *= c;
            }
        }
    }

    pub fn add(&mut self, other: &GradientBuffer) {
        for (l, o) in [
            (&mut self.similarity, &other.similarity),
            (&mut self.hidden1, &other.hidden1),
            (&mut self.hidden2, &other.hidden2),
            (&mut self.output, &other.output),
        ] {
            for (w, ow) in l.weights.iter_mut().zip(&o.weights) {
                *w += ow;
            }
            for (b, ob) in l.bias.iter_mut().zip(&o.bias) {
                *b += ob;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in [&self.similarity, &self.hidden1, &self.hidden2, &self.output] {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Activation record for one policy-network forward pass.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Run the two-hidden-layer policy network over one observation.
pub fn policy_forward(params: &ModelParams, input: &[f64]) -> Result<PolicyCache, NnError> {
    let z1 = params.hidden1.affine(input)?;
    let a1: Vec<f64> = z1.iter().map(|&z| params.activation.apply(z)).collect();
    let z2 = params.hidden2.affine(&a1)?;
    let a2: Vec<f64> = z2.iter().map(|&z| params.activation.apply(z)).collect();
    let logits = params.output.affine(&a2)?;
    let probs = softmax(&logits);
    Ok(PolicyCache {
        input: input.to_vec(),
        z1,
        a1,
        z2,
        a2,
        logits,
        probs,
    })
}

/// Backpropagate an upstream gradient on the logits through the policy
/// network, accumulating into `grad` and returning the input gradient.
/// The input gradient feeds the similarity path: observations contain
/// similarity-module outputs.
pub fn policy_backward(
    params: &ModelParams,
    cache: &PolicyCache,
    d_logits: &[f64],
    grad: &mut GradientBuffer,
) -> Result<Vec<f64>, NnError> {
    if d_logits.len() != NUM_LEVELS {
        return Err(NnError::DimMismatch {
            expected: NUM_LEVELS,
            got: d_logits.len(),
        });
    }
    let d_a2 = params.output.backward_into(&cache.a2, d_logits, &mut grad.output);
    let d_z2: Vec<f64> = d_a2
        .iter()
        .zip(&cache.z2)
        .map(|(&g, &z)| g * params.activation.derive(z))
        .collect();
    let d_a1 = params.hidden2.backward_into(&cache.a1, &d_z2, &mut grad.hidden2);
    let d_z1: Vec<f64> = d_a1
        .iter()
        .zip(&cache.z1)
        .map(|(&g, &z)| g * params.activation.derive(z))
        .collect();
    Ok(params.hidden1.backward_into(&cache.input, &d_z1, &mut grad.hidden1))
}

/// Gradient of `log pi(action | input)` with respect to the logits:
/// onehot(action) - probs.
pub fn log_prob_logit_grad(probs: &[f64], action: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == action { 1.0 - p } else { -p })
        .collect()
}

/// One gradient-ascent step: theta <- theta + lr * grad.
/// Pre-training negates the gradient of cross-entropy before calling this.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientBuffer, learning_rate: f64) -> Result<(), NnError> {
    if !grads.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    for (l, g) in [
        (&mut params.similarity, &grads.similarity),
        (&mut params.hidden1, &grads.hidden1),
        (&mut params.hidden2, &grads.hidden2),
        (&mut params.output, &grads.output),
    ] {
        debug_assert!(l.same_shape(g));
        for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
            *w += learning_rate * gw;
        }
        for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
            *b += learning_rate * gb;
        }
    }
    Ok(())
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central finite differences of a scalar loss over the flattened parameters.
pub fn numeric_gradient<F>(params: &ModelParams, epsilon: f64, loss: F) -> Vec<f64>
where
    F: Fn(&ModelParams) -> f64,
{
    let flat = params.to_flat();
    let mut work = params.clone();
    let mut grad = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + epsilon;
        work.assign_flat(&probe);
        let plus = loss(&work);
        probe[i] = flat[i] - epsilon;
        work.assign_flat(&probe);
        let minus = loss(&work);
        probe[i] = flat[i];
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    work.assign_flat(&flat);
    grad
}

/// Compare an analytic gradient against central finite differences of the
/// same loss; returns the max relative error over all parameters.
pub fn max_gradient_error<F>(
    params: &ModelParams,
    analytic: &GradientBuffer,
    epsilon: f64,
    loss: F,
) -> f64
where
    F: Fn(&ModelParams) -> f64,
{
    let numeric = numeric_gradient(params, epsilon, loss);
    analytic
        .to_flat()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Check the policy-network gradients on one observation with the scalar loss
/// `log pi(action | input)`. Returns the max relative error.
pub fn grad_check_policy(params: &ModelParams, input: &[f64], action: usize, epsilon: f64) -> Result<f64, NnError> {
    let cache = policy_forward(params, input)?;
    let mut grad = params.grad_buffer();
    let d_logits = log_prob_logit_grad(&cache.probs, action);
    policy_backward(params, &cache, &d_logits, &mut grad)?;
    Ok(max_gradient_error(params, &grad, epsilon, |p| {
        let c = policy_forward(p, input).unwrap();
        log_softmax(&c.logits)[action]
    }))
}

pub fn save_params<W: std::io::Write>(params: &ModelParams, writer: W) -> Result<(), NnError> {
    serde_json::to_writer(writer, params).map_err(|e| NnError::Serde(e.to_string()))
}

pub fn load_params<R: std::io::Read>(reader: R) -> Result<ModelParams, NnError> {
    let params: ModelParams =
        serde_json::from_reader(reader).map_err(|e| NnError::Serde(e.to_string()))?;
    if params.version != PARAMS_FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            got: params.version,
            expected: PARAMS_FORMAT_VERSION,
        });
    }
    let obs = ModelParams::obs_dim(params.feature_dim, params.k);
    let checks = [
        (params.similarity.in_dim == 4 * params.feature_dim, "similarity input"),
        (params.similarity.out_dim == 1, "similarity output"),
        (params.hidden1.in_dim == obs, "hidden1 input"),
        (params.hidden1.out_dim == params.hidden, "hidden1 output"),
        (params.hidden2.in_dim == params.hidden, "hidden2 input"),
        (params.output.out_dim == NUM_LEVELS, "output head"),
    ];
    for (ok, what) in checks {
        if !ok {
            return Err(NnError::BadShape(what.to_string()));
        }
    }
    for l in params.layers() {
        if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
            return Err(NnError::BadShape("layer buffer lengths".into()));
        }
        if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(NnError::BadShape("non-finite parameter".into()));
        }
    }
    Ok(params)
}
