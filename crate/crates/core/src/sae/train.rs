// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic single-threaded training loop.
//!
//! Every token row is one training example. A fixed fraction of rows is
//! held out once; the remainder is reshuffled every epoch. Given the same
//! seed the loop visits rows and reduces gradients in the same order, so
//! the resulting parameters are bit-identical on one platform.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Gradients, SaeModel};
use crate::activation_io::ActivationSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Held-out loss is recorded every this many steps (0 disables intermediate evals).
    pub eval_every: usize,
    pub held_out_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 64,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 500,
            held_out_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            return Err(Error::InvalidInput("held_out_fraction must be in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Training batch loss after each step.
    pub loss_curve: Vec<f64>,
    /// `(step, held-out loss)` pairs; step 0 is before any update.
    pub held_out_curve: Vec<(usize, f64)>,
    pub initial_held_out_loss: f64,
    pub final_held_out_loss: f64,
    /// Latents that never fire on the held-out rows of the final model.
    pub dead_features: usize,
    pub train_tokens: usize,
    pub held_out_tokens: usize,
}

fn held_out_loss(model: &SaeModel, rows: &[&[f32]]) -> f64 {
    rows.iter().map(|x| model.sample_error_unchecked(x)).sum::<f64>() / rows.len() as f64
}

fn dead_features(model: &SaeModel, rows: &[&[f32]]) -> usize {
    let mut alive = vec![false; model.d_sae()];
    for x in rows {
        for &i in &model.encode_unchecked(x).indices {
            alive[i] = true;
        }
    }
    alive.iter().filter(|a| !**a).count()
}

pub fn train(model: &SaeModel, data: &ActivationSet, cfg: &TrainConfig) -> Result<(SaeModel, TrainReport)> {
    train_with_observer(model, data, cfg, |_, _| {})
}

/// Like [`train`], calling `observe(step, model)` after every update
/// (steps counted from 1).
pub fn train_with_observer<F>(
    model: &SaeModel,
    data: &ActivationSet,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<(SaeModel, TrainReport)>
where
    F: FnMut(usize, &SaeModel),
{
    cfg.validate()?;
    if data.dim() != model.d_model() {
        return Err(Error::Dimension(format!(
            "activations have dim {} but the model expects {}",
            data.dim(),
            model.d_model()
        )));
    }

    let rows: Vec<&[f32]> = data.token_rows().collect();
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let n_held = ((n as f64 * cfg.held_out_fraction).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < n_held + cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "{n} token rows cannot fill one batch of {} after holding out {n_held}",
            cfg.batch_size
        )));
    }
    let held: Vec<&[f32]> = order[..n_held].iter().map(|&i| rows[i]).collect();
    let mut train_idx: Vec<usize> = order[n_held..].to_vec();

    let initial = held_out_loss(model, &held);
    let mut report = TrainReport {
        steps: cfg.steps,
        loss_curve: Vec::with_capacity(cfg.steps),
        held_out_curve: vec![(0, initial)],
        initial_held_out_loss: initial,
        final_held_out_loss: initial,
        dead_features: 0,
        train_tokens: train_idx.len(),
        held_out_tokens: n_held,
    };

    let mut model = model.clone();
    if cfg.steps == 0 {
        report.dead_features = dead_features(&model, &held);
        return Ok((model, report));
    }

    let mut adam = Adam::new(cfg.adam(), &model);
    let mut grads = Gradients::zeros(model.d_model(), model.d_sae());
    let mut cursor = train_idx.len();

    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > train_idx.len() {
            train_idx.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &train_idx[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;

        grads.clear();
        let loss = model.accumulate_grad(batch.iter().map(|&i| rows[i]), batch.len(), &mut grads);
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        adam.step(&mut model, &grads);
        model.normalize_decoder();
        if !model.is_finite() {
            return Err(Error::Diverged { step });
        }
        report.loss_curve.push(loss);
        observe(step, &model);

        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            report.held_out_curve.push((step, held_out_loss(&model, &held)));
        }
    }

    let fin = held_out_loss(&model, &held);
    if !fin.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    report.held_out_curve.push((cfg.steps, fin));
    report.final_held_out_loss = fin;
    report.dead_features = dead_features(&model, &held);
    Ok((model, report))
}
