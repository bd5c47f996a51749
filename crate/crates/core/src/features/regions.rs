use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Boxes and feature vectors for the regions of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub image_id: String,
    /// Normalized `[x1, y1, x2, y2]`, each in `[0, 1]`.
    pub boxes: Vec<[f32; 4]>,
    /// One row of length `feature_dim` per box.
    pub features: Vec<Vec<f32>>,
}

impl RegionFeatures {
    pub fn n_regions(&self) -> usize {
        self.boxes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Checks region count, box geometry, feature shape and finiteness.
    pub fn validate(&self, max_regions: usize) -> Result<(), FeatureError> {
        let n = self.boxes.len();
        if n == 0 || n > max_regions {
            return Err(FeatureError::SchemaViolation(format!(
                "{n} regions, expected 1..={max_regions}"
            )));
        }
        if self.features.len() != n {
            return Err(FeatureError::SchemaViolation(format!(
                "{} feature rows for {n} boxes",
                self.features.len()
            )));
        }
        let dim = self.feature_dim();
        for (i, (b, f)) in self.boxes.iter().zip(&self.features).enumerate() {
            let [x1, y1, x2, y2] = *b;
            let in_unit = b.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_unit || x1 >= x2 || y1 >= y2 {
                return Err(FeatureError::SchemaViolation(format!(
                    "region {i} has an invalid box {b:?}"
                )));
            }
            if f.len() != dim || dim == 0 {
                return Err(FeatureError::SchemaViolation(format!(
                    "region {i} has {} features, expected {dim}",
                    f.len()
                )));
            }
            if !f.iter().all(|v| v.is_finite()) {
                return Err(FeatureError::SchemaViolation(format!(
                    "region {i} has non-finite features"
                )));
            }
        }
        Ok(())
    }
}
