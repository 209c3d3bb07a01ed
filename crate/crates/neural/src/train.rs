use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gma_core::features::{FeatureMatrix, FmClass, LabeledSample};

use crate::adam::{Adam, AdamConfig};
use crate::model::{decide, stack, ModelWeights};
use crate::network::DropoutMasks;
use crate::spec::NetworkSpec;
use crate::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: u32,
    pub max_epochs: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            validation_fraction: 0.125,
            patience: 10,
            max_epochs: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_owned()));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and max epochs must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    /// Fraction of validation samples classified correctly.
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the best validation accuracy.
    pub weights: ModelWeights,
    pub history: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub best_val_acc: f64,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> u32 {
        self.history.len() as u32
    }
}

/// `epoch,train_loss,val_acc`
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_acc);
    }
    out
}

/// Sees which dataset indices feed each training batch and each validation
/// pass, and the weights at the end of every epoch.
pub trait TrainObserver {
    fn batch(&mut self, _indices: &[usize]) {}
    fn validation(&mut self, _indices: &[usize]) {}
    fn epoch_end(&mut self, _record: &EpochRecord, _weights: &ModelWeights) {}
}

impl TrainObserver for () {}

/// Accuracy in `[0, 1]` of eval-mode predictions.
pub fn accuracy(weights: &ModelWeights, samples: &[LabeledSample], indices: &[usize]) -> Result<f64, NeuralError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(64) {
        let inputs: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &samples[i].features).collect();
        let probs = weights.predict(&inputs)?;
        correct += chunk
            .iter()
            .zip(probs)
            .filter(|(&i, p)| decide(*p) == samples[i].class)
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

fn label(class: FmClass) -> f32 {
    class.as_label() as f32
}

/// Trains on `samples[indices]`: a seeded eighth is held out for validation,
/// the rest is visited in shuffled batches. Stops once validation accuracy
/// has not improved for `patience` epochs and returns the best snapshot.
pub fn train(
    samples: &[LabeledSample],
    indices: &[usize],
    spec: &NetworkSpec,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, NeuralError> {
    config.validate()?;
    spec.validate()?;
    let has = |c: FmClass| indices.iter().any(|&i| samples[i].class == c);
    if !has(FmClass::Present) || !has(FmClass::Absent) {
        return Err(NeuralError::SingleClassDataset);
    }
    if indices.len() < 2 {
        return Err(NeuralError::TooFewSamples {
            n: indices.len(),
            needed: 2,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = indices.to_vec();
    order.shuffle(&mut rng);
    let n_val = ((indices.len() as f64 * config.validation_fraction).floor() as usize).clamp(1, indices.len() - 1);
    let (val, rest) = order.split_at(n_val);
    let val = val.to_vec();
    let mut train_idx = rest.to_vec();

    let mut weights = ModelWeights::init(spec, config.seed)?;
    let mut adam = Adam::new(weights.layout().param_len);
    let mut best = (weights.clone(), 0u32, f64::NEG_INFINITY);
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in train_idx.chunks(config.batch_size) {
            observer.batch(chunk);
            let inputs: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &samples[i].features).collect();
            let x = stack(&inputs)?;
            let labels: Vec<f32> = chunk.iter().map(|&i| label(samples[i].class)).collect();
            let masks = DropoutMasks::sample(spec, chunk.len(), &mut rng);
            let (loss, grad, stats) = weights.gradients(x.view(), &labels, &masks)?;
            adam.step(weights.params_mut(), &grad, &config.adam);
            weights.update_running(&stats);
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        observer.validation(&val);
        let val_acc = accuracy(&weights, samples, &val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_acc,
        };
        observer.epoch_end(&record, &weights);
        history.push(record);
        if val_acc > best.2 {
            best = (weights.clone(), epoch, val_acc);
        }
        if epoch - best.1 >= config.patience {
            break;
        }
    }

    let (weights, best_epoch, best_val_acc) = best;
    Ok(TrainOutcome {
        weights,
        history,
        best_epoch,
        best_val_acc,
    })
}

/// [`train`] over every sample.
pub fn train_all(
    samples: &[LabeledSample],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    let all: Vec<usize> = (0..samples.len()).collect();
    train(samples, &all, spec, config, &mut ())
}
