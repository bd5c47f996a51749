use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One encoder over concatenated question and region tokens.
    SingleStream,
    /// Separate language and vision encoders joined by cross-attention layers.
    DualStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layers {
    Single(usize),
    Dual {
        language: usize,
        vision: usize,
        cross: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub feature_dim: usize,
    pub max_question_tokens: usize,
    pub max_regions: usize,
    pub vocab_size: usize,
    pub layers: Layers,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn single_stream() -> Self {
        Self {
            architecture: Architecture::SingleStream,
            hidden_dim: 128,
            n_heads: 4,
            feature_dim: 2048,
            max_question_tokens: 20,
            max_regions: 36,
            vocab_size: 0,
            layers: Layers::Single(4),
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn dual_stream() -> Self {
        Self {
            architecture: Architecture::DualStream,
            layers: Layers::Dual {
                language: 2,
                vision: 2,
                cross: 2,
            },
            ..Self::single_stream()
        }
    }

    pub fn for_architecture(architecture: Architecture) -> Self {
        match architecture {
            Architecture::SingleStream => Self::single_stream(),
            Architecture::DualStream => Self::dual_stream(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 || self.n_heads == 0 {
            return fail("hidden_dim and n_heads must be positive");
        }
        if self.hidden_dim % self.n_heads != 0 {
            return fail("hidden_dim must be divisible by n_heads");
        }
        if self.feature_dim == 0 || self.max_regions == 0 || self.max_question_tokens == 0 {
            return fail("feature_dim, max_regions and max_question_tokens must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        match (self.architecture, self.layers) {
            (Architecture::SingleStream, Layers::Single(l)) if l >= 1 => Ok(()),
            (Architecture::DualStream, Layers::Dual { language, vision, cross })
                if language >= 1 && vision >= 1 && cross >= 1 =>
            {
                Ok(())
            }
            (Architecture::SingleStream, Layers::Single(_))
            | (Architecture::DualStream, Layers::Dual { .. }) => fail("all depths must be at least 1"),
            _ => fail("layer layout does not match the architecture"),
        }
    }
}
