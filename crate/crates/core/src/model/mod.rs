//! Desk-scale VQA transformers.
//!
//! Both architectures map question token ids and region features to one
//! logit per answer and expose every attention matrix of the pass:
//!
//! - single-stream: `[CLS] question [SEP] regions` through one encoder;
//! - dual-stream: a language encoder, a vision encoder and cross-modality
//!   layers, pooled from the language `[CLS]` token.
//!
//! Gradients come from the reverse-mode tape in [`autodiff`].

pub mod artifact;
pub mod autodiff;
mod config;
mod layers;
mod network;
pub mod params;
mod trace;
mod vocab;

pub use artifact::{load_model, save_model, ModelArtifact, PretrainedInfo, FORMAT_VERSION, MAGIC};
pub use autodiff::{sigmoid, Gradients};
pub use config::{Architecture, Layers, ModelConfig};
pub use network::{ForwardResult, VisualTerms, VqaModel};
pub use params::{ParamId, ParamStore};
pub use trace::{AttentionMap, AttentionTrace, Stream, TokenMap};
pub use vocab::{words, Vocab, CLS, PAD, SEP, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input shape error: {0}")]
    Shape(String),
    #[error("model produced non-finite logits")]
    NonFinite,
    #[error("model artifact is corrupt: {0}")]
    CorruptArtifact(String),
    #[error("artifact format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("artifact metadata is invalid: {0}")]
    Metadata(#[from] serde_json::Error),
}
