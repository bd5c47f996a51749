//! Central finite differences against the analytic gradients of the loss.

use rand::Rng;
use vqa_core::features::RegionFeatures;
use vqa_core::model::{Architecture, Layers, ModelConfig, ParamId, VqaModel};

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

/// hidden 16, 2 heads, 4 regions; one or two layers per encoder.
pub fn tiny_config(arch: Architecture) -> ModelConfig {
    let mut c = ModelConfig::for_architecture(arch);
    c.hidden_dim = 16;
    c.n_heads = 2;
    c.feature_dim = 6;
    c.max_regions = 4;
    c.max_question_tokens = 6;
    c.vocab_size = 10;
    c.dropout = 0.0;
    c.layers = match arch {
        Architecture::SingleStream => Layers::Single(2),
        Architecture::DualStream => Layers::Dual { language: 1, vision: 1, cross: 1 },
    };
    c
}

pub fn random_regions<R: Rng>(rng: &mut R, n: usize, dim: usize) -> RegionFeatures {
    let boxes = (0..n)
        .map(|_| {
            let (x0, y0) = (rng.random_range(0.0..0.5f32), rng.random_range(0.0..0.5f32));
            [x0, y0, x0 + rng.random_range(0.1..0.5f32), y0 + rng.random_range(0.1..0.5f32)]
        })
        .collect();
    let features = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())
        .collect();
    RegionFeatures { image_id: "random".into(), boxes, features }
}

/// Question ids using words 4.. of the vocabulary, padded to the limit.
pub fn random_ids<R: Rng>(rng: &mut R, config: &ModelConfig, n_words: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..n_words)
        .map(|_| rng.random_range(4..config.vocab_size as u32))
        .collect();
    ids.resize(config.max_question_tokens, vqa_core::model::PAD);
    ids
}

pub fn random_targets<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0][rng.random_range(0..4)])
        .collect()
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares `n` randomly chosen scalars: a tensor uniformly at random, then
/// an element of it.
pub fn check_gradients<R: Rng>(
    model: &mut VqaModel,
    ids: &[u32],
    regions: &RegionFeatures,
    targets: &[f64],
    n: usize,
    rng: &mut R,
) -> Vec<Probe> {
    let (_, grads) = model
        .loss_and_gradients(ids, regions, targets, None)
        .expect("loss");
    let tensors: Vec<(ParamId, String, (usize, usize))> = model
        .params()
        .iter()
        .map(|(id, name, v)| (id, name.to_string(), v.dim()))
        .collect();
    let mut probes = Vec::with_capacity(n);
    for _ in 0..n {
        let (id, name, (rows, cols)) = tensors[rng.random_range(0..tensors.len())].clone();
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
        let original = model.params().value(id)[[r, c]];
        model.params_mut().value_mut(id)[[r, c]] = original + STEP;
        let up = model.loss(ids, regions, targets).expect("loss");
        model.params_mut().value_mut(id)[[r, c]] = original - STEP;
        let down = model.loss(ids, regions, targets).expect("loss");
        model.params_mut().value_mut(id)[[r, c]] = original;
        probes.push(Probe {
            param: name,
            row: r,
            col: c,
            analytic,
            numeric: (up - down) / (2.0 * STEP),
        });
    }
    probes
}
