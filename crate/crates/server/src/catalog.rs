use serde::{Deserialize, Serialize};

use vqa_core::finetune::TrainSpec;
use vqa_core::model::{Architecture, Layers, ModelConfig};

use crate::error::{ApiError, ErrorCode};

/// One selectable architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub display_name: String,
    pub architecture: Architecture,
    pub description: String,
    pub default_train_spec: TrainSpec,
}

pub const SINGLE_STREAM_ID: &str = "visualbert";
pub const DUAL_STREAM_ID: &str = "lxmert";

pub fn architecture_for(model_id: &str) -> Option<Architecture> {
    match model_id {
        SINGLE_STREAM_ID => Some(Architecture::SingleStream),
        DUAL_STREAM_ID => Some(Architecture::DualStream),
        _ => None,
    }
}

/// The two models, with `base` applied to each default spec.
pub fn catalog(base: &TrainDefaults) -> Vec<ModelEntry> {
    vec![
        ModelEntry {
            id: SINGLE_STREAM_ID.into(),
            display_name: "VisualBERT".into(),
            architecture: Architecture::SingleStream,
            description: "Single-stream: one encoder over question and region tokens.".into(),
            default_train_spec: base.spec_for(Architecture::SingleStream),
        },
        ModelEntry {
            id: DUAL_STREAM_ID.into(),
            display_name: "LXMERT".into(),
            architecture: Architecture::DualStream,
            description: "Dual-stream: language and vision encoders joined by cross-attention.".into(),
            default_train_spec: base.spec_for(Architecture::DualStream),
        },
    ]
}

/// Server-wide training defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDefaults {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub n_heads: usize,
}

impl Default for TrainDefaults {
    fn default() -> Self {
        let spec = TrainSpec::new(ModelConfig::single_stream());
        TrainDefaults {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            learning_rate: spec.learning_rate,
            seed: spec.seed,
            hidden_dim: spec.model_config.hidden_dim,
            n_heads: spec.model_config.n_heads,
        }
    }
}

impl TrainDefaults {
    pub fn spec_for(&self, arch: Architecture) -> TrainSpec {
        let mut config = ModelConfig::for_architecture(arch);
        config.hidden_dim = self.hidden_dim;
        config.n_heads = self.n_heads;
        config.seed = self.seed;
        TrainSpec {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..TrainSpec::new(config)
        }
    }
}

/// Optional changes to a default spec, as sent by clients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub min_count: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub n_heads: Option<usize>,
    pub max_question_tokens: Option<usize>,
    pub dropout: Option<f64>,
    pub layers: Option<Layers>,
}

impl TrainOverrides {
    pub fn apply(&self, mut spec: TrainSpec) -> Result<TrainSpec, ApiError> {
        let c = &mut spec.model_config;
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
            c.seed = v;
        }
        if let Some(v) = self.min_count {
            spec.min_count = v;
        }
        if let Some(v) = self.hidden_dim {
            c.hidden_dim = v;
        }
        if let Some(v) = self.n_heads {
            c.n_heads = v;
        }
        if let Some(v) = self.max_question_tokens {
            c.max_question_tokens = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.layers {
            c.layers = v;
        }
        spec.validate()
            .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))?;
        Ok(spec)
    }
}
