use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::mlp::{LossKind, MlpModel};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::selection::TrainabilityMask;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    /// Mini-batch size; `0` or anything `>= n` means full batch.
    pub batch: usize,
    #[serde(default)]
    pub loss: LossKind,
    /// Seed of the per-epoch shuffle.
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap()
    }
}

/// Mini-batch gradient descent with plain `θ ← θ − lr·∇θ` updates.
///
/// Parameters with `mask = false` are never written, so they come out
/// bit-identical. Every name in `mask` must be a model parameter; model
/// parameters absent from the mask are frozen.
pub fn train_task<T: Scalar>(
    model: &mut MlpModel<T>,
    data: &Dataset<T>,
    mask: &TrainabilityMask,
    hyper: &TrainHyper,
) -> Result<TrainReport> {
    hyper.validate()?;
    let params = model.param_names();
    if let Some(bad) = mask.names().find(|n| !params.iter().any(|p| p == n)) {
        return Err(Error::Config(format!("mask names unknown parameter {bad:?}")));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let trainable: Vec<&String> = params.iter().filter(|p| mask.is_trainable(p)).collect();
    let n = data.len();
    let batch = if hyper.batch == 0 { n } else { hyper.batch.min(n) };
    let lr = T::of(hyper.lr);
    let mut stream = Stream::new(hyper.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut steps = 0;

    for epoch in 0..hyper.epochs {
        stream.shuffle(&mut order);
        let mut weighted = 0.0;
        for chunk in order.chunks(batch) {
            let b = data.gather(chunk);
            let (loss, grads) = model.loss_and_gradients(&b.inputs, &b.targets, hyper.loss)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            weighted += loss * chunk.len() as f64;
            for name in &trainable {
                let g = grads.get(name).unwrap();
                for (p, &gi) in model.param_mut(name).unwrap().iter_mut().zip(g) {
                    *p -= lr * gi;
                }
            }
            steps += 1;
        }
        epoch_losses.push(weighted / n as f64);
    }
    Ok(TrainReport { epoch_losses, steps })
}

/// Whole-set loss without updating anything.
pub fn evaluate<T: Scalar>(model: &MlpModel<T>, data: &Dataset<T>, loss: LossKind) -> Result<f64> {
    Ok(model.loss(&data.inputs, &data.targets, loss)?.as_f64())
}
