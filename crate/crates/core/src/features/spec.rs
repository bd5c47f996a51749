use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const DEFAULT_MAX_REGIONS: usize = 36;
pub const DEFAULT_FEATURE_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    BuiltinGrid,
    External,
}

/// Which extractor produces region features, and with what budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    /// Base URL of a remote extractor; required for [`ExtractorKind::External`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub max_regions: usize,
    pub feature_dim: usize,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self::grid(DEFAULT_MAX_REGIONS, DEFAULT_FEATURE_DIM)
    }
}

impl ExtractorSpec {
    pub fn grid(max_regions: usize, feature_dim: usize) -> Self {
        Self {
            kind: ExtractorKind::BuiltinGrid,
            endpoint: None,
            max_regions,
            feature_dim,
        }
    }

    pub fn external(endpoint: impl Into<String>, max_regions: usize, feature_dim: usize) -> Self {
        Self {
            kind: ExtractorKind::External,
            endpoint: Some(endpoint.into()),
            max_regions,
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.max_regions == 0 || self.feature_dim == 0 {
            return Err(FeatureError::InvalidSpec(
                "max_regions and feature_dim must be positive".into(),
            ));
        }
        if self.kind == ExtractorKind::External
            && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty())
        {
            return Err(FeatureError::InvalidSpec(
                "an external extractor needs an endpoint".into(),
            ));
        }
        Ok(())
    }

    /// Regions actually produced: the grid extractor uses a k×k grid with
    /// the largest k² not above `max_regions`.
    pub fn effective_regions(&self) -> usize {
        match self.kind {
            ExtractorKind::BuiltinGrid => grid_side(self.max_regions).pow(2),
            ExtractorKind::External => self.max_regions,
        }
    }
}

/// Largest k with k² ≤ `max_regions` (at least 1).
pub fn grid_side(max_regions: usize) -> usize {
    let mut k = (max_regions as f64).sqrt() as usize;
    while k * k > max_regions {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= max_regions {
        k += 1;
    }
    k.max(1)
}
