//! Dense residual mean predictor `mu_theta(tau_i, i, cond)`.
//!
//! Input is `[tau_i | time embedding | cond]`, followed by `hidden_layers`
//! SiLU layers and a linear head; `tau_i` is added back to the head output.
//! Activations are stored feature-major, one contiguous column per batch
//! item, so a sample's output never depends on what else is in the batch.

mod adam;
mod checkpoint;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT_VERSION};
pub use train::{loss, loss_with_draws, train, Draw, LossOutput, TrainConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`.
    Silu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub input_dim: usize,
    pub cond_dim: usize,
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl DenoiserConfig {
    pub fn new(input_dim: usize, cond_dim: usize) -> Self {
        Self {
            input_dim,
            cond_dim,
            time_embed_dim: 64,
            hidden_dim: 256,
            hidden_layers: 3,
            activation: Activation::Silu,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.hidden_layers == 0 {
            return Err(Error::domain("denoiser dimensions must be positive"));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::domain(format!(
                "time embedding dimension must be positive and even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    /// Width of the network input `[tau | embedding | cond]`.
    pub fn network_input_dim(&self) -> usize {
        self.input_dim + self.time_embed_dim + self.cond_dim
    }

    /// `(fan_in, fan_out)` of every dense layer, input to head.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.network_input_dim(), self.hidden_dim)];
        for _ in 1..self.hidden_layers {
            shapes.push((self.hidden_dim, self.hidden_dim));
        }
        shapes.push((self.hidden_dim, self.input_dim));
        shapes
    }
}

/// Sinusoidal embedding: pairs `(sin(i w_d), cos(i w_d))` with
/// `w_d = exp(-ln(1e4) * 2d / dim)`.
pub fn embed_time(i: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::domain(format!("time embedding dimension {dim} is odd")));
    }
    if i > steps {
        return Err(Error::domain(format!("diffusion step {i} outside 0..={steps}")));
    }
    let mut out = Vec::with_capacity(dim);
    embed_into(i, dim, &mut out);
    Ok(out)
}

fn embed_into(i: usize, dim: usize, out: &mut Vec<f64>) {
    let ln = 10_000f64.ln();
    for d in 0..dim / 2 {
        let w = (-ln * (2 * d) as f64 / dim as f64).exp();
        let (s, c) = (i as f64 * w).sin_cos();
        out.push(s);
        out.push(c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Named description of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Optimizer steps taken; one step consumes one sampled batch.
    pub epochs: usize,
    pub epoch_definition: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
}

/// Parameters stored as one flat vector: for each layer, its row-major
/// `fan_out x fan_in` weight followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    layers: Vec<LayerShape>,
    theta: Vec<f64>,
    pub metadata: Option<TrainingMetadata>,
}

fn layout(config: &DenoiserConfig) -> (Vec<LayerShape>, usize) {
    let mut offset = 0;
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let shape = LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            shape
        })
        .collect();
    (layers, offset)
}

impl DenoiserParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let (layers, len) = layout(config);
        let mut theta = vec![0.0; len];
        let mut s = crate::rng::stream(config.seed, crate::rng::tag::INIT, 0);
        for l in &layers {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut theta[l.weight_offset..l.bias_offset] {
                *w = s.random_range(-limit..=limit);
            }
        }
        Ok(Self {
            config: config.clone(),
            layers,
            theta,
            metadata: None,
        })
    }

    pub fn zeros(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let (layers, len) = layout(config);
        Ok(Self {
            config: config.clone(),
            layers,
            theta: vec![0.0; len],
            metadata: None,
        })
    }

    pub fn from_flat(config: &DenoiserConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layers, len) = layout(config);
        check_len("denoiser parameters", len, theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("denoiser parameters must be finite"));
        }
        Ok(Self {
            config: config.clone(),
            layers,
            theta,
            metadata: None,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    ParamInfo {
                        name: format!("layer{k}.weight"),
                        shape: vec![l.fan_out, l.fan_in],
                    },
                    ParamInfo {
                        name: format!("layer{k}.bias"),
                        shape: vec![l.fan_out],
                    },
                ]
            })
            .collect()
    }

    /// Builds the feature-major network input for a batch. `taus` holds
    /// `batch` normalized trajectories back to back, `conds` likewise.
    pub fn assemble_input(&self, taus: &[f64], steps: &[usize], conds: &[f64]) -> Result<Vec<f64>> {
        let c = &self.config;
        let batch = steps.len();
        check_len("batched trajectories", batch * c.input_dim, taus.len())?;
        check_len("batched conditions", batch * c.cond_dim, conds.len())?;
        if taus.iter().chain(conds).any(|v| !v.is_finite()) {
            return Err(Error::domain("denoiser input is not finite"));
        }
        let mut x = Vec::with_capacity(batch * c.network_input_dim());
        for (b, &i) in steps.iter().enumerate() {
            x.extend_from_slice(&taus[b * c.input_dim..(b + 1) * c.input_dim]);
            embed_into(i, c.time_embed_dim, &mut x);
            x.extend_from_slice(&conds[b * c.cond_dim..(b + 1) * c.cond_dim]);
        }
        Ok(x)
    }

    /// `mu_theta` for one normalized trajectory at step `i`.
    pub fn forward(&self, tau_i: &[f64], i: usize, cond: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(tau_i, &[i], cond)
    }

    /// `mu_theta` for a batch; inputs and outputs are item-major.
    pub fn forward_batch(&self, taus: &[f64], steps: &[usize], conds: &[f64]) -> Result<Vec<f64>> {
        let x = self.assemble_input(taus, steps, conds)?;
        Ok(self.run(&x, steps.len(), false).output)
    }

    /// Forward pass over an assembled input, optionally keeping the
    /// pre-activations needed for backpropagation.
    pub(crate) fn run(&self, x: &[f64], batch: usize, keep: bool) -> Pass {
        let last = self.layers.len() - 1;
        let mut pre = Vec::new();
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut current = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.fan_out * batch];
            let bias = &self.theta[l.bias_offset..l.bias_offset + l.fan_out];
            for col in z.chunks_exact_mut(l.fan_out) {
                col.copy_from_slice(bias);
            }
            gemm(
                (l.fan_out, l.fan_in, batch),
                &self.theta[l.weight_offset..l.bias_offset],
                (l.fan_in, 1),
                &current,
                (1, l.fan_in),
                1.0,
                &mut z,
                (1, l.fan_out),
            );
            let next = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| silu(v)).collect()
            };
            if keep {
                inputs.push(std::mem::take(&mut current));
                pre.push(z);
            }
            current = next;
        }
        // Residual skip: add tau_i back.
        let d = self.config.input_dim;
        let width = self.config.network_input_dim();
        for b in 0..batch {
            for (o, t) in current[b * d..(b + 1) * d].iter_mut().zip(&x[b * width..b * width + d]) {
                *o += t;
            }
        }
        Pass {
            output: current,
            inputs,
            pre,
        }
    }

    /// Gradient of `sum(d_out . output)` with respect to the parameters.
    pub(crate) fn backward(&self, pass: &Pass, d_out: &[f64], batch: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        let mut delta = d_out.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            if k != self.layers.len() - 1 {
                for (d, &z) in delta.iter_mut().zip(&pass.pre[k]) {
                    *d *= silu_grad(z);
                }
            }
            let x = &pass.inputs[k];
            // dW = delta . x'
            gemm(
                (l.fan_out, batch, l.fan_in),
                &delta,
                (1, l.fan_out),
                x,
                (l.fan_in, 1),
                0.0,
                &mut grad[l.weight_offset..l.bias_offset],
                (l.fan_in, 1),
            );
            let db = &mut grad[l.bias_offset..l.bias_offset + l.fan_out];
            for col in delta.chunks_exact(l.fan_out) {
                for (g, d) in db.iter_mut().zip(col) {
                    *g += d;
                }
            }
            if k > 0 {
                let mut dx = vec![0.0; l.fan_in * batch];
                gemm(
                    (l.fan_in, l.fan_out, batch),
                    &self.theta[l.weight_offset..l.bias_offset],
                    (1, l.fan_in),
                    &delta,
                    (1, l.fan_out),
                    0.0,
                    &mut dx,
                    (1, l.fan_in),
                );
                delta = dx;
            }
        }
        grad
    }

    /// Euclidean norm of each parameter tensor, for diagnostics.
    pub fn tensor_norms(&self) -> Vec<(String, f64)> {
        self.param_info()
            .into_iter()
            .zip(self.layers.iter().flat_map(|l| {
                [
                    (l.weight_offset, l.bias_offset),
                    (l.bias_offset, l.bias_offset + l.fan_out),
                ]
            }))
            .map(|(info, (a, b))| (info.name, crate::linalg::norm(&self.theta[a..b])))
            .collect()
    }
}

pub(crate) struct Pass {
    pub output: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            input_dim: 5,
            cond_dim: 3,
            time_embed_dim: 4,
            hidden_dim: 7,
            hidden_layers: 2,
            activation: Activation::Silu,
            seed: 11,
        }
    }

    #[test]
    fn embedding_at_zero_alternates() {
        let e = embed_time(0, 10, 8).unwrap();
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(embed_time(0, 10, 7).is_err());
        assert!(embed_time(11, 10, 8).is_err());
    }

    #[test]
    fn embeddings_bounded_and_distinct() {
        let all: Vec<Vec<f64>> = (0..=1000).map(|i| embed_time(i, 1000, 64).unwrap()).collect();
        assert!(all.iter().flatten().all(|v| v.abs() <= 1.0));
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let gap = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(gap >= 1e-6, "steps {i} and {j} collide");
            }
        }
    }

    /// With every parameter zero the head is zero, leaving only the skip.
    #[test]
    fn zero_weights_return_input() {
        let p = DenoiserParams::zeros(&tiny()).unwrap();
        let tau = [1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(p.forward(&tau, 3, &[1.0, 1.0, 1.0]).unwrap(), tau.to_vec());
    }

    #[test]
    fn forward_is_repeatable_and_batch_invariant() {
        let p = DenoiserParams::init(&tiny()).unwrap();
        let mut s = rng::stream(1, 0, 0);
        let taus = rng::normal_vec(&mut s, 5 * 9);
        let conds = rng::normal_vec(&mut s, 3 * 9);
        let steps: Vec<usize> = (0..9).map(|b| b * 3).collect();
        let batched = p.forward_batch(&taus, &steps, &conds).unwrap();
        assert_eq!(batched, p.forward_batch(&taus, &steps, &conds).unwrap());
        for b in 0..9 {
            let single = p.forward(&taus[b * 5..(b + 1) * 5], steps[b], &conds[b * 3..(b + 1) * 3]).unwrap();
            assert_eq!(single.as_slice(), &batched[b * 5..(b + 1) * 5]);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = DenoiserParams::init(&tiny()).unwrap();
        assert!(p.forward(&[f64::NAN, 0.0, 0.0, 0.0, 0.0], 1, &[0.0; 3]).is_err());
        assert!(p.forward(&[0.0; 4], 1, &[0.0; 3]).is_err());
    }

    #[test]
    fn output_sum_gradient_matches_central_differences() {
        let mut p = DenoiserParams::init(&tiny()).unwrap();
        let mut s = rng::stream(2, 0, 0);
        for v in p.flat_mut() {
            *v += 0.1 * rng::standard_normal(&mut s);
        }
        let tau = rng::normal_vec(&mut s, 10);
        let cond = rng::normal_vec(&mut s, 6);
        let steps = [4, 9];
        let x = p.assemble_input(&tau, &steps, &cond).unwrap();
        let pass = p.run(&x, 2, true);
        let grad = p.backward(&pass, &[1.0; 10], 2);
        let total = |q: &DenoiserParams| q.forward_batch(&tau, &steps, &cond).unwrap().iter().sum::<f64>();
        let h = 1e-5;
        for k in 0..p.len() {
            let mut up = p.clone();
            up.flat_mut()[k] += h;
            let mut dn = p.clone();
            dn.flat_mut()[k] -= h;
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            assert!(err <= 1e-5, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let p = DenoiserParams::init(&tiny()).unwrap();
        for l in p.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(p.flat()[l.weight_offset..l.bias_offset].iter().all(|w| w.abs() <= limit));
            assert!(p.flat()[l.bias_offset..l.bias_offset + l.fan_out].iter().all(|&b| b == 0.0));
        }
        assert_eq!(p.param_info().len(), 2 * p.layers().len());
    }
}
