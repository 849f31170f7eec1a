//! Mini-batch SGD with momentum on the weighted quadratic objective.

mod init;
mod sgd;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use init::InitScheme;
pub use sgd::{sgd_step, OptimizerState};

use crate::data::{PatchSample, Weighting};
use crate::error::{Error, Result};
use crate::layers::weighted_quadratic_loss;
use crate::network::Model;
use crate::tensor::Tensor;

/// Class id treated as the positive class by single-output networks.
pub const POSITIVE_CLASS: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub weighting: Weighting,
    pub dropout: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 48,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 10,
            iterations_per_epoch: 10_000,
            weighting: Weighting::None,
            dropout: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::Config(
                "iterations_per_epoch must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for r in &self.epochs {
            let val = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, val));
        }
        out
    }
}

/// Weight `1/n_k` for each class in the histogram. A class listed with a
/// zero count is an error; classes absent from the map get no weight.
pub fn compute_class_weights(histogram: &BTreeMap<u8, usize>) -> Result<BTreeMap<u8, f64>> {
    histogram
        .iter()
        .map(|(&class, &count)| {
            if count == 0 {
                Err(Error::MissingClass(class))
            } else {
                Ok((class, 1.0 / count as f64))
            }
        })
        .collect()
}

/// Regression targets for a batch of labels: `±1` for single-output
/// networks, one-hot rows otherwise.
pub fn encode_targets(labels: &[u8], width: usize) -> Tensor {
    let n = labels.len();
    let mut t = Tensor::zeros(&[n, width]);
    let d = t.data_mut();
    for (i, &label) in labels.iter().enumerate() {
        if width == 1 {
            d[i] = if label == POSITIVE_CLASS { 1.0 } else { -1.0 };
        } else if (label as usize) < width {
            d[i * width + label as usize] = 1.0;
        }
    }
    t
}

/// Stacks samples into a patch batch and, when requested, an N×2 position
/// tensor.
pub fn assemble_batch(
    samples: &[&PatchSample],
    with_positions: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let patches: Vec<&Tensor> = samples.iter().map(|s| &s.patch).collect();
    let batch = Tensor::stack(&patches)?;
    let positions = with_positions.then(|| {
        let data = samples
            .iter()
            .flat_map(|s| [s.position.0, s.position.1])
            .collect();
        Tensor::from_vec(&[samples.len(), 2], data).expect("two coordinates per sample")
    });
    Ok((batch, positions))
}

/// Weighted quadratic loss of `model` over `samples`, evaluated in batches
/// of `batch_size`.
pub fn evaluate_loss(model: &Model, samples: &[PatchSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let width = model.output_width();
    let (mut total, mut mass) = (0.0f64, 0.0f64);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let (x, pos) = assemble_batch(&refs, model.uses_positions())?;
        let out = model.forward(&x, pos.as_ref())?;
        let labels: Vec<u8> = chunk.iter().map(|s| s.label).collect();
        let weights: Vec<f32> = chunk.iter().map(|s| s.weight).collect();
        let chunk_mass: f64 = weights.iter().map(|&w| w as f64).sum();
        let (loss, _) = weighted_quadratic_loss(&out, &encode_targets(&labels, width), &weights)?;
        total += loss * chunk_mass;
        mass += chunk_mass;
    }
    Ok(total / mass)
}

/// Called after every epoch with the epoch number (from 1) and the current
/// model; the returned value is recorded as that epoch's validation metric.
pub type Validator<'a> = dyn FnMut(usize, &Model) -> Result<f64> + 'a;

/// Runs `epochs × iterations_per_epoch` mini-batch updates.
///
/// Batches are drawn uniformly with replacement from `dataset` with a
/// generator seeded from `config.seed`; the same generator drives dropout,
/// so a run is fully determined by (model, dataset, config).
pub fn train(
    model: &mut Model,
    dataset: &[PatchSample],
    config: &TrainConfig,
    mut validate: Option<&mut Validator<'_>>,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(model);
    let width = model.output_width();
    let positions = model.uses_positions();
    let mut report = TrainReport::default();
    let mut iteration = 0u64;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0f64;
        for _ in 0..config.iterations_per_epoch {
            let batch: Vec<&PatchSample> = (0..config.batch_size)
                .map(|_| &dataset[rng.gen_range(0..dataset.len())])
                .collect();
            let (x, pos) = assemble_batch(&batch, positions)?;
            let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
            let weights: Vec<f32> = batch.iter().map(|s| s.weight).collect();

            model.zero_grads();
            let (out, trace) = model.forward_train(&x, pos.as_ref(), &mut rng)?;
            let (loss, grad) =
                weighted_quadratic_loss(&out, &encode_targets(&labels, width), &weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            model.backward_params(&trace, &grad)?;
            sgd_step(model, &mut state, config.learning_rate, config.momentum);
            loss_sum += loss;
            iteration += 1;
        }
        let val_metric = match validate.as_deref_mut() {
            Some(f) => Some(f(epoch, model)?),
            None => None,
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / config.iterations_per_epoch as f64,
            val_metric,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(report)
}
