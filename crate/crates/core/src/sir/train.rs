use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stage_rng;

use super::model::{loss_gradient, EncodedPair, RetrieverModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SirTrainParams {
    pub d: usize,
    pub init_std: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SirTrainParams {
    fn default() -> Self {
        SirTrainParams { d: 64, init_std: 0.1, lr: 0.1, epochs: 5, seed: 13 }
    }
}

impl SirTrainParams {
    pub fn check(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Parameter("d must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::Parameter(format!("init_std must be positive, got {}", self.init_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SirTraining {
    pub model: RetrieverModel,
    /// Mean loss over each epoch's steps, measured before each step's update.
    pub epoch_losses: Vec<f64>,
}

/// Plain SGD, one example per step, visiting the examples in a fresh seeded
/// permutation every epoch.
pub fn train(init: RetrieverModel, pairs: &[EncodedPair], lr: f64, epochs: usize, seed: u64) -> Result<SirTraining> {
    if epochs > 0 && pairs.is_empty() {
        return Err(Error::Data("cannot train the retriever on an empty dataset".into()));
    }
    let mut model = init;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut rng = stage_rng(seed, &format!("sir-epoch:{epoch}"));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (value, grad) = loss_gradient(&model, &pairs[i])?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("retriever loss diverged at step {step} (lr = {lr})")));
            }
            total += value;
            for (row, g) in grad {
                for (w, gi) in model.row_mut(row).iter_mut().zip(g) {
                    *w -= lr * gi;
                }
            }
            if model.table().iter().any(|w| !w.is_finite()) {
                return Err(Error::Numeric(format!("non-finite embedding after step {step} (lr = {lr})")));
            }
            step += 1;
        }
        let mean = total / pairs.len() as f64;
        log::debug!("retriever epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(SirTraining { model, epoch_losses })
}
