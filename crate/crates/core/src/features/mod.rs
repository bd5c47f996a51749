//! Region features: a box plus a feature vector for each region of an image.
//!
//! Two extractors implement the same contract: a deterministic built-in
//! grid extractor and a client for a remote detector service. Results are
//! cached on disk keyed by the image content hash.

mod cache;
mod external;
mod grid;
mod regions;
mod spec;
mod store;

pub use cache::{cache_features, CacheReport};
pub use external::{extract_external, extract_url, normalize_response, ExtractResponse};
pub use grid::{extract_grid, extract_grid_bytes};
pub use regions::RegionFeatures;
pub use spec::{grid_side, ExtractorKind, ExtractorSpec, DEFAULT_FEATURE_DIM, DEFAULT_MAX_REGIONS};
pub use store::{content_hash, FeatureRecord, FeatureStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image could not be decoded: {0}")]
    UnreadableImage(String),
    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("extractor response violates the schema: {0}")]
    SchemaViolation(String),
    #[error("invalid extractor spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("feature store record is invalid: {0}")]
    Format(#[from] serde_json::Error),
}

/// Anything that turns image bytes into region features.
pub trait Extractor: Send + Sync {
    fn spec(&self) -> &ExtractorSpec;

    fn extract(&self, image_id: &str, image: &[u8]) -> Result<RegionFeatures, FeatureError>;
}

/// The extractor described by a spec.
#[derive(Debug, Clone)]
pub struct SpecExtractor {
    spec: ExtractorSpec,
}

impl SpecExtractor {
    pub fn new(spec: ExtractorSpec) -> Result<Self, FeatureError> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Extractor for SpecExtractor {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract(&self, image_id: &str, image: &[u8]) -> Result<RegionFeatures, FeatureError> {
        match self.spec.kind {
            ExtractorKind::BuiltinGrid => {
                extract_grid_bytes(image_id, image, self.spec.max_regions, self.spec.feature_dim)
            }
            ExtractorKind::External => extract_external(image_id, image, &self.spec),
        }
    }
}
