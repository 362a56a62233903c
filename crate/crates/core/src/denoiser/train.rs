use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, DenoiserConfig, DenoiserParams, TrainingMetadata};
use crate::diffusion::{posterior_coefficients, NoiseSchedule};
use crate::error::{check_len, Error, Result};
use crate::rng;
use crate::tasks::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps; each draws one batch.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Invoke the checkpoint callback every this many steps.
    pub save_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 30_000,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            save_every: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Diffusion step and forward-process noise for one batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub step: usize,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Loss and gradient for explicit draws. `tau0s` and `conds` hold the batch
/// item-major, in normalized coordinates.
///
/// The loss is the mean over items and coordinates of
/// `(mu_q(tau_i, tau0, i) - mu_theta(tau_i, i, cond))^2`.
pub fn loss_with_draws(
    params: &DenoiserParams,
    tau0s: &[f64],
    conds: &[f64],
    draws: &[Draw],
    sched: &NoiseSchedule,
) -> Result<LossOutput> {
    let d = params.config().input_dim;
    let batch = draws.len();
    if batch == 0 {
        return Err(Error::domain("loss needs a nonempty batch"));
    }
    check_len("loss trajectories", batch * d, tau0s.len())?;
    let mut taus = Vec::with_capacity(batch * d);
    let mut targets = Vec::with_capacity(batch * d);
    let mut steps = Vec::with_capacity(batch);
    for (b, draw) in draws.iter().enumerate() {
        let i = draw.step;
        if i == 0 || i > sched.steps() || sched.alpha(i) <= 0.0 {
            return Err(Error::domain(format!("training step {i} has no defined posterior mean")));
        }
        check_len("loss noise draw", d, draw.eps.len())?;
        let tau0 = &tau0s[b * d..(b + 1) * d];
        let ab = sched.alpha_bar(i);
        let (s, t) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (ci, c0) = posterior_coefficients(i, sched);
        for (x, e) in tau0.iter().zip(&draw.eps) {
            let ti = s * x + t * e;
            taus.push(ti);
            targets.push(ci * ti + c0 * x);
        }
        steps.push(i);
    }
    let x = params.assemble_input(&taus, &steps, conds)?;
    let pass = params.run(&x, batch, true);
    let scale = 1.0 / (batch * d) as f64;
    let mut loss = 0.0;
    let d_out: Vec<f64> = pass
        .output
        .iter()
        .zip(&targets)
        .map(|(o, t)| {
            let r = o - t;
            loss += r * r;
            2.0 * r * scale
        })
        .collect();
    let grad = params.backward(&pass, &d_out, batch);
    Ok(LossOutput {
        loss: loss * scale,
        grad,
    })
}

/// Draws a step uniformly from `1..=max_training_step` and standard normal
/// noise for every item, then evaluates [`loss_with_draws`].
pub fn loss(
    params: &DenoiserParams,
    tau0s: &[f64],
    conds: &[f64],
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<LossOutput> {
    let d = params.config().input_dim;
    let draws = draw_batch(tau0s.len() / d.max(1), d, sched, rng)?;
    loss_with_draws(params, tau0s, conds, &draws, sched)
}

fn draw_batch(batch: usize, d: usize, sched: &NoiseSchedule, rng: &mut impl Rng) -> Result<Vec<Draw>> {
    let top = sched.max_training_step();
    if top < 1 {
        return Err(Error::domain("schedule has no trainable steps"));
    }
    Ok((0..batch)
        .map(|_| {
            let step = rng.random_range(1..=top);
            Draw {
                step,
                eps: rng::normal_vec(rng, d),
            }
        })
        .collect())
}

/// Trains from a Glorot initialization. `on_checkpoint` is called with the
/// current parameters every `save_every` steps and after the last step.
pub fn train(
    dataset: &Dataset,
    sched: &NoiseSchedule,
    config: &DenoiserConfig,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&DenoiserParams, usize) -> Result<()>,
) -> Result<DenoiserParams> {
    let dims = dataset.dims();
    check_len("denoiser input size", dims.flat_len(), config.input_dim)?;
    check_len("denoiser condition size", dataset.layout().len(), config.cond_dim)?;
    if cfg.batch_size == 0 {
        return Err(Error::domain("batch size must be positive"));
    }
    let mut params = DenoiserParams::init(config)?;
    let mut opt = Adam::new(cfg.adam(), params.len());
    let d = config.input_dim;
    let c = config.cond_dim;
    let scales = dataset.scales();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut tau0s = vec![0.0; cfg.batch_size * d];
    let mut conds = vec![0.0; cfg.batch_size * c];

    for epoch in 0..cfg.epochs {
        let mut s = rng::stream(cfg.seed, rng::tag::TRAINING, epoch as u64);
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| s.random_range(0..dataset.len())).collect();
        for (b, &k) in picks.iter().enumerate() {
            for ((dst, x), sc) in tau0s[b * d..(b + 1) * d].iter_mut().zip(dataset.trajectory(k)).zip(scales) {
                *dst = x / sc;
            }
            conds[b * c..(b + 1) * c].copy_from_slice(dataset.condition(k));
        }
        let out = loss(&params, &tau0s, &conds, sched, &mut s)?;
        if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
            let norms: Vec<String> = params
                .tensor_norms()
                .into_iter()
                .map(|(name, v)| format!("{name}={v:.3e}"))
                .collect();
            return Err(Error::Numerical(format!(
                "non-finite loss {} at epoch {epoch} (batch records {picks:?}); parameter norms: {}",
                out.loss,
                norms.join(", ")
            )));
        }
        opt.update(params.flat_mut(), &out.grad)?;
        curve.push(out.loss);
        let done = epoch + 1;
        if cfg.save_every.is_some_and(|every| every > 0 && done % every == 0 && done < cfg.epochs) {
            params.metadata = Some(metadata(cfg, &curve));
            on_checkpoint(&params, done)?;
        }
    }
    params.metadata = Some(metadata(cfg, &curve));
    on_checkpoint(&params, cfg.epochs)?;
    Ok(params)
}

fn metadata(cfg: &TrainConfig, curve: &[f64]) -> TrainingMetadata {
    TrainingMetadata {
        epochs: curve.len(),
        epoch_definition: "one optimizer step on one sampled batch".into(),
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        loss_curve: curve.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Activation;
    use crate::diffusion::linear_schedule;
    use crate::diffusion::posterior_mean;

    fn tiny(seed: u64) -> DenoiserConfig {
        DenoiserConfig {
            input_dim: 4,
            cond_dim: 2,
            time_embed_dim: 4,
            hidden_dim: 6,
            hidden_layers: 2,
            activation: Activation::Silu,
            seed,
        }
    }

    #[test]
    fn loss_is_nonnegative_and_matches_direct_formula() {
        let sched = linear_schedule(0.1, 10).unwrap();
        let p = DenoiserParams::init(&tiny(1)).unwrap();
        let mut s = rng::stream(3, 0, 0);
        let tau0s = rng::normal_vec(&mut s, 12);
        let conds = rng::normal_vec(&mut s, 6);
        let draws = draw_batch(3, 4, &sched, &mut s).unwrap();
        let out = loss_with_draws(&p, &tau0s, &conds, &draws, &sched).unwrap();
        assert!(out.loss >= 0.0);

        let mut direct = 0.0;
        for (b, draw) in draws.iter().enumerate() {
            let tau0 = &tau0s[b * 4..(b + 1) * 4];
            let ti = crate::diffusion::forward_sample(tau0, draw.step, &draw.eps, &sched).unwrap();
            let target = posterior_mean(&ti, tau0, draw.step, &sched).unwrap();
            let pred = p.forward(&ti, draw.step, &conds[b * 2..(b + 1) * 2]).unwrap();
            direct += target.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert!((out.loss - direct / 12.0).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn steps_never_hit_the_singular_end() {
        let sched = linear_schedule(0.25, 4).unwrap();
        let mut s = rng::stream(0, 0, 0);
        let draws = draw_batch(2000, 1, &sched, &mut s).unwrap();
        assert!(draws.iter().all(|d| (1..=3).contains(&d.step)));
        assert!((1..=3).all(|i| draws.iter().any(|d| d.step == i)));
    }

    /// A one-layer toy: zero hidden output, so the head bias alone sets the
    /// prediction `tau_i + b`. The loss is quadratic in `b` with a known
    /// minimizer, and its gradient is checked against central differences.
    #[test]
    fn gradient_of_bias_only_toy() {
        let cfg = DenoiserConfig {
            input_dim: 2,
            cond_dim: 0,
            time_embed_dim: 2,
            hidden_dim: 1,
            hidden_layers: 1,
            activation: Activation::Silu,
            seed: 0,
        };
        let sched = linear_schedule(0.1, 10).unwrap();
        let mut p = DenoiserParams::zeros(&cfg).unwrap();
        let head_bias = p.layers()[1].bias_offset;
        p.flat_mut()[head_bias] = 0.3;
        p.flat_mut()[head_bias + 1] = -0.7;
        let tau0s = [1.0, 2.0];
        let draws = [Draw {
            step: 4,
            eps: vec![0.5, -1.0],
        }];
        let out = loss_with_draws(&p, &tau0s, &[], &draws, &sched).unwrap();
        let h = 1e-5;
        for k in [head_bias, head_bias + 1] {
            let mut up = p.clone();
            up.flat_mut()[k] += h;
            let mut dn = p.clone();
            dn.flat_mut()[k] -= h;
            let fd = (loss_with_draws(&up, &tau0s, &[], &draws, &sched).unwrap().loss
                - loss_with_draws(&dn, &tau0s, &[], &draws, &sched).unwrap().loss)
                / (2.0 * h);
            assert!((fd - out.grad[k]).abs() <= 1e-5 * fd.abs().max(1e-8));
        }
    }

    /// When the head bias equals `mu_q - tau_i` for a single draw, the loss
    /// vanishes.
    #[test]
    fn exact_prediction_gives_zero_loss() {
        let cfg = DenoiserConfig {
            input_dim: 2,
            cond_dim: 0,
            time_embed_dim: 2,
            hidden_dim: 1,
            hidden_layers: 1,
            activation: Activation::Silu,
            seed: 0,
        };
        let sched = linear_schedule(0.1, 10).unwrap();
        let tau0 = [1.0, 2.0];
        let draw = Draw {
            step: 4,
            eps: vec![0.5, -1.0],
        };
        let ti = crate::diffusion::forward_sample(&tau0, 4, &draw.eps, &sched).unwrap();
        let target = posterior_mean(&ti, &tau0, 4, &sched).unwrap();
        let mut p = DenoiserParams::zeros(&cfg).unwrap();
        let head_bias = p.layers()[1].bias_offset;
        p.flat_mut()[head_bias] = target[0] - ti[0];
        p.flat_mut()[head_bias + 1] = target[1] - ti[1];
        let out = loss_with_draws(&p, &tau0, &[], &[draw], &sched).unwrap();
        assert!(out.loss < 1e-28);
    }
}
