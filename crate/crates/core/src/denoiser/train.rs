//! Noise-prediction training: `L = mean || eps_theta(z_t, t, z_cond) - eps ||^2`
//! with `t ~ U{1..T}` and `eps ~ N(0, I)`, optimized by plain SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Condition, NoiseEstimator, ToyDenoiser, ZeroDenoiser};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::rng::rng_for;
use crate::sampler::forward_noise;
use crate::scheduler::Schedule;

/// Clean latent `z_0` with the condition it should be recovered from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub target: Latent,
    pub condition: Condition,
}

/// A fully drawn training example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedItem {
    pub z_t: Latent,
    pub t: usize,
    pub condition: Condition,
    pub eps: Latent,
}

pub trait Trainable: NoiseEstimator {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Mean squared noise error over every element of every item, and its gradient.
    fn loss_and_grad(&self, items: &[NoisedItem]) -> Result<(f64, Vec<f64>)>;
}

impl Trainable for ToyDenoiser {
    fn params(&self) -> &[f64] {
        ToyDenoiser::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        ToyDenoiser::params_mut(self)
    }

    fn loss_and_grad(&self, items: &[NoisedItem]) -> Result<(f64, Vec<f64>)> {
        let total: usize = items.iter().map(|it| it.eps.len()).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let weight = 1.0 / total as f64;
        let mut grad = vec![0.0; self.params().len()];
        let mut sse = 0.0;
        for it in items {
            sse += self.accumulate_grad(&it.z_t, it.t, &it.condition, &it.eps, weight, &mut grad)?;
        }
        Ok((sse * weight, grad))
    }
}

impl Trainable for ZeroDenoiser {
    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn loss_and_grad(&self, items: &[NoisedItem]) -> Result<(f64, Vec<f64>)> {
        Ok((noise_loss(self, items)?, Vec::new()))
    }
}

/// Draws `t` and `eps` for each pair and forms `z_t` by forward noising.
pub fn noised_items(
    pairs: &[TrainPair],
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NoisedItem>> {
    pairs
        .iter()
        .map(|p| {
            let t = rng.random_range(1..=schedule.steps());
            let eps: Vec<f64> = (0..p.target.len())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let eps = Latent::from_shape_vec(p.target.shape(), eps)?;
            let z_t = forward_noise(&p.target, t, &eps, schedule)?;
            Ok(NoisedItem {
                z_t,
                t,
                condition: p.condition.clone(),
                eps,
            })
        })
        .collect()
}

/// Fixed draws for comparing losses across training.
pub fn evaluation_items(pairs: &[TrainPair], schedule: &Schedule, seed: u64) -> Result<Vec<NoisedItem>> {
    let mut rng = rng_for(seed, &[0x6576_616c]);
    noised_items(pairs, schedule, &mut rng)
}

pub fn noise_loss(model: &dyn NoiseEstimator, items: &[NoisedItem]) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    for it in items {
        let pred = model.predict_noise(&it.z_t, it.t, &it.condition)?;
        it.eps.ensure_shape(pred.shape(), "noise target")?;
        sse += pred
            .values()
            .iter()
            .zip(it.eps.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += pred.len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(sse / count as f64)
}

/// One SGD update on a freshly drawn batch; returns the pre-update loss.
pub fn train_step(
    model: &mut dyn Trainable,
    batch: &[TrainPair],
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("training batch is empty".into()));
    }
    let items = noised_items(batch, schedule, rng)?;
    let (loss, grad) = model.loss_and_grad(&items)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let ts: Vec<usize> = items.iter().map(|i| i.t).collect();
        return Err(Error::NonFinite(format!(
            "training loss {loss} (timesteps {ts:?}, lr {lr})"
        )));
    }
    for (p, g) in model.params_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            lr: 1e-2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Pre-update batch loss of every step.
    pub losses: Vec<f64>,
    /// Loss on a fixed evaluation draw before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Runs `opts.steps` SGD steps over shuffled mini-batches of `data`.
pub fn train(
    model: &mut dyn Trainable,
    data: &[TrainPair],
    schedule: &Schedule,
    opts: TrainOptions,
) -> Result<TrainReport> {
    if data.is_empty() || opts.batch_size == 0 {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if !(opts.lr > 0.0) || !opts.lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {} must be positive", opts.lr)));
    }
    let eval = evaluation_items(data, schedule, opts.seed)?;
    let initial_loss = noise_loss(&*model, &eval)?;

    let mut rng = rng_for(opts.seed, &[0x0074_7261_696e]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut losses = Vec::with_capacity(opts.steps);
    let mut batch = Vec::with_capacity(opts.batch_size);
    for _ in 0..opts.steps {
        batch.clear();
        while batch.len() < opts.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        losses.push(train_step(model, &batch, schedule, &mut rng, opts.lr)?);
    }
    let final_loss = noise_loss(&*model, &eval)?;
    Ok(TrainReport {
        losses,
        initial_loss,
        final_loss,
    })
}

/// Largest relative disagreement between analytic gradients and central
/// finite differences (step `1e-4`) over every parameter.
pub fn gradient_check(model: &mut dyn Trainable, probe: &[NoisedItem]) -> Result<f64> {
    const STEP: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let (_, analytic) = model.loss_and_grad(probe)?;
    let mut worst: f64 = 0.0;
    for j in 0..analytic.len() {
        let orig = model.params()[j];
        model.params_mut()[j] = orig + STEP;
        let (plus, _) = model.loss_and_grad(probe)?;
        model.params_mut()[j] = orig - STEP;
        let (minus, _) = model.loss_and_grad(probe)?;
        model.params_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[j];
        let denom = a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
