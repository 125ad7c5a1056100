use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::adam::{AdamConfig, AdamState};
use super::{AeModel, Gradients};
use crate::error::{Result, SimError};
use crate::rng::RngHandle;

/// Rows per gradient work item. Fixed so that the reduction order, and hence
/// the trained weights, do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Validation loss is recorded every `val_every` epochs (and at the last).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 5000,
            adam: AdamConfig::default(),
            seed: 0,
            val_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SimError::param("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(SimError::param("epochs must be >= 1"));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(SimError::param("learning rate must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.train).collect()
    }

    pub fn final_train_loss(&self) -> f64 {
        self.history.last().map(|e| e.train).unwrap_or(f64::NAN)
    }
}

fn batch_gradients(model: &AeModel, x: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, Gradients)> {
    let rows = x.nrows();
    let starts: Vec<usize> = (0..rows).step_by(GRAD_CHUNK).collect();
    let parts: Vec<(f64, Gradients)> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + GRAD_CHUNK).min(rows);
            let w = (hi - lo) as f64 / rows as f64;
            model.backward_batch(x.slice(s![lo..hi, ..]), y.slice(s![lo..hi, ..]), w)
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for ((aw, ab), (bw, bb)) in total.layers.iter_mut().zip(g.layers) {
            *aw += &bw;
            *ab += &bb;
        }
    }
    Ok((loss, total))
}

/// Mean MSE of the model over a set of rows.
pub fn evaluate(model: &AeModel, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    let pred = model.forward_batch(x.view())?;
    let diff = pred - y;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// Mini-batch Adam on MSE. `train_x`/`train_y` hold one sample per row.
pub fn train(
    mut model: AeModel,
    train_x: &Array2<f64>,
    train_y: &Array2<f64>,
    validation: Option<(&Array2<f64>, &Array2<f64>)>,
    cfg: &TrainConfig,
) -> Result<(AeModel, TrainReport)> {
    cfg.validate()?;
    let n = train_x.nrows();
    if n == 0 {
        return Err(SimError::param("training set is empty"));
    }
    if train_y.nrows() != n {
        return Err(SimError::Shape {
            expected: n,
            actual: train_y.nrows(),
        });
    }
    let mut adam = AdamState::new(&model);
    let mut rng = RngHandle::new(cfg.seed, 0x7a1).rng();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = train_x.select(Axis(0), idx);
            let yb = train_y.select(Axis(0), idx);
            let (loss, grads) = batch_gradients(&model, &xb, &yb)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(SimError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * idx.len() as f64;
            adam.update(&mut model, &grads, &cfg.adam);
        }
        let last = epoch + 1 == cfg.epochs;
        let validation_loss = match validation {
            Some((vx, vy))
                if vx.nrows() > 0 && ((epoch + 1) % cfg.val_every.max(1) == 0 || last) =>
            {
                Some(evaluate(&model, vx, vy)?)
            }
            _ => None,
        };
        let entry = EpochLoss {
            epoch,
            train: epoch_loss / n as f64,
            validation: validation_loss,
        };
        if (epoch + 1) % 50 == 0 || last {
            log::info!(
                "epoch {}/{}: train {:.3e}{}",
                epoch + 1,
                cfg.epochs,
                entry.train,
                entry
                    .validation
                    .map(|v| format!(", validation {v:.3e}"))
                    .unwrap_or_default()
            );
        }
        report.history.push(entry);
    }
    Ok((model, report))
}
