use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FinetuneError;
use crate::model::params::round_to_f32;
use crate::model::{Gradients, ModelConfig, VqaModel};
use crate::features::RegionFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub model_config: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Minimum answer frequency for the answer space.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    1
}

impl TrainSpec {
    pub fn new(model_config: ModelConfig) -> Self {
        Self {
            model_config,
            epochs: 10,
            batch_size: 32,
            learning_rate: 5e-4,
            seed: 0,
            min_count: 1,
        }
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(FinetuneError::InvalidSpec("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FinetuneError::InvalidSpec("learning_rate must be positive".into()));
        }
        self.model_config.validate()?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> usize {
        n_examples.div_ceil(self.batch_size)
    }
}

/// One tokenized question with its regions and soft targets.
#[derive(Debug, Clone)]
pub struct TrainingExample<'a> {
    pub ids: Vec<u32>,
    pub regions: &'a RegionFeatures,
    pub targets: Vec<f64>,
}

/// Emitted after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub epoch: usize,
    pub step: usize,
    pub total_steps: usize,
    /// Mean loss of the batch just processed.
    pub loss: f64,
}

impl StepEvent {
    pub fn fraction(&self) -> f64 {
        self.step as f64 / self.total_steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean example loss of each epoch, as seen during training.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Adam with bias correction; parameters stay `f32`-representable.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(model: &VqaModel, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .params()
            .iter()
            .map(|(_, _, v)| Array2::zeros(v.raw_dim()))
            .collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One update with the base learning rate scaled by `lr_scale`.
    pub fn step(&mut self, model: &mut VqaModel, grads: &[Option<Array2<f64>>], lr_scale: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr * lr_scale);
        let ids: Vec<_> = model.params().iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let i = id.index();
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = model.params_mut().value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p = round_to_f32(*p - update);
            });
        }
    }
}

/// Linear warm-up over the first tenth of the steps, then the base rate.
pub fn lr_scale(step: usize, total_steps: usize) -> f64 {
    let warmup = (total_steps / 10).max(1);
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else {
        1.0
    }
}

fn example_seed(seed: u64, step: usize, position: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (position as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Sums per-example gradients in a fixed order and divides by the batch size.
fn mean_gradients(per_example: Vec<Gradients>, n_params: usize) -> Vec<Option<Array2<f64>>> {
    let n = per_example.len() as f64;
    let mut total: Vec<Option<Array2<f64>>> = vec![None; n_params];
    for grads in per_example {
        for (slot, g) in total.iter_mut().zip(grads.0) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => *acc += &g,
                    None => *slot = Some(g),
                }
            }
        }
    }
    for g in total.iter_mut().flatten() {
        *g /= n;
    }
    total
}

/// Optimizes summed per-label binary cross-entropy against soft targets.
/// Examples are reshuffled every epoch from `spec.seed`; cancellation is
/// checked between batches.
pub fn train_examples(
    model: &mut VqaModel,
    examples: &[TrainingExample<'_>],
    spec: &TrainSpec,
    on_step: &mut dyn FnMut(&StepEvent),
    cancel: Option<&AtomicBool>,
) -> Result<TrainOutcome, FinetuneError> {
    spec.validate()?;
    if examples.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    let total_steps = spec.epochs * spec.steps_per_epoch(examples.len());
    let mut adam = Adam::new(model, spec.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let use_dropout = model.config().dropout > 0.0;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(spec.epochs);

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                return Err(FinetuneError::Interrupted);
            }
            let frozen: &VqaModel = model;
            let results: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let ex = &examples[i];
                    let rng = use_dropout
                        .then(|| ChaCha8Rng::seed_from_u64(example_seed(spec.seed, step, pos)));
                    frozen.loss_and_gradients(&ex.ids, ex.regions, &ex.targets, rng)
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut grads = Vec::with_capacity(results.len());
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                grads.push(g);
            }
            if !batch_loss.is_finite() {
                return Err(FinetuneError::Diverged { epoch, step: step + 1 });
            }
            loss_sum += batch_loss;
            let mean = mean_gradients(grads, model.params().len());
            adam.step(model, &mean, lr_scale(step, total_steps));
            step += 1;
            on_step(&StepEvent {
                epoch,
                step,
                total_steps,
                loss: batch_loss / batch.len() as f64,
            });
        }
        epoch_losses.push(loss_sum / examples.len() as f64);
    }
    Ok(TrainOutcome { epoch_losses, steps: step })
}
