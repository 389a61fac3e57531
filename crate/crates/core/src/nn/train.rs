use serde::{Deserialize, Serialize};

use super::graph::{backward, forward};
use super::loss::Example;
use super::params::{Gradients, Params};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_every_epochs: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Iterations between validation-loss evaluations; 0 disables them.
    pub validation_frequency: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            lr_decay_every_epochs: 2,
            lr_decay_factor: 0.5,
            max_epochs: 6,
            batch_size: 10,
            validation_frequency: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be > 0, got {}", self.initial_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every_epochs == 0 {
            return Err(Error::Config("lr_decay_every_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Step schedule: `initial_lr * factor^floor(epoch / every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every_epochs) as i32;
        self.initial_lr * self.lr_decay_factor.powi(steps)
    }
}

/// Mean loss and mean parameter gradient over `batch`.
pub fn batch_gradient(net: &NetworkSpec, params: &Params, batch: &[&Example]) -> Result<(f64, Gradients)> {
    let mut total = Gradients::default();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let (out, cache) = forward(net, params, &ex.input)?;
        let (l, dl) = net.loss.evaluate(&out, &ex.target);
        loss += l;
        let g = backward(net, params, &cache, &dl)?;
        total.accumulate(&g, scale);
    }
    Ok((loss * scale, total))
}

/// One pass over `data` in a seeded shuffled order; returns the mean
/// per-example loss observed during the epoch.
pub fn sgd_epoch(
    net: &NetworkSpec,
    params: &mut Params,
    data: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    sgd_epoch_inner(net, params, data, cfg, epoch, &mut |_, _| Ok(()))
}

fn sgd_epoch_inner(
    net: &NetworkSpec,
    params: &mut Params,
    data: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
    after_batch: &mut dyn FnMut(&Params, usize) -> Result<()>,
) -> Result<f64> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let lr = cfg.lr_at(epoch);
    let order = Rng::new(cfg.seed).substream(epoch as u64).permutation(data.len());
    let mut loss_sum = 0.0;
    for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let (loss, grads) = batch_gradient(net, params, &batch)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: bi });
        }
        loss_sum += loss * batch.len() as f64;
        params.apply_sgd(&grads, lr);
        after_batch(params, bi)?;
    }
    Ok(loss_sum / data.len() as f64)
}

pub fn mean_loss(net: &NetworkSpec, params: &Params, data: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let (out, _) = forward(net, params, &ex.input)?;
        total += net.loss.evaluate(&out, &ex.target).0;
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    /// (iteration, mean validation loss)
    pub validation: Vec<(usize, f64)>,
}

/// Runs `cfg.max_epochs` epochs, evaluating `validation` every
/// `cfg.validation_frequency` iterations when both are set.
pub fn train(
    net: &NetworkSpec,
    params: &mut Params,
    data: &[Example],
    validation: Option<&[Example]>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    let mut iteration = 0usize;
    for epoch in 0..cfg.max_epochs {
        let mut val_log = Vec::new();
        let loss = sgd_epoch_inner(net, params, data, cfg, epoch, &mut |p, _| {
            iteration += 1;
            if let Some(val) = validation.filter(|v| !v.is_empty()) {
                if cfg.validation_frequency > 0 && iteration.is_multiple_of(cfg.validation_frequency) {
                    val_log.push((iteration, mean_loss(net, p, val)?));
                }
            }
            Ok(())
        })?;
        history.epoch_losses.push(loss);
        history.validation.extend(val_log);
    }
    Ok(history)
}
