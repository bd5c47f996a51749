//! Client for a remote region detector.
//!
//! The image is POSTed raw to `<endpoint>/extract` with the headers
//! `X-Max-Regions` and `X-Feature-Dim`. The reply is JSON:
//!
//! ```json
//! {"image": {"width": 640, "height": 480},
//!  "regions": [{"box": [x1, y1, x2, y2], "feature": [0.1, ...]}]}
//! ```
//!
//! Boxes are absolute pixel coordinates and are normalized here.

use std::time::Duration;

use serde::Deserialize;

use super::{ExtractorKind, ExtractorSpec, FeatureError, RegionFeatures};

const RESPONSE_LIMIT: u64 = 256 * 1024 * 1024;
const TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Deserialize)]
pub struct ExtractResponse {
    pub image: ImageSize,
    pub regions: Vec<RegionPayload>,
}

#[derive(Debug, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Deserialize)]
pub struct RegionPayload {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub feature: Vec<f64>,
}

fn violation(msg: String) -> FeatureError {
    FeatureError::SchemaViolation(msg)
}

/// Validates a decoded response, keeps the first `max_regions` regions in
/// provider order and normalizes their boxes.
pub fn normalize_response(
    image_id: &str,
    resp: ExtractResponse,
    max_regions: usize,
    feature_dim: usize,
) -> Result<RegionFeatures, FeatureError> {
    let (w, h) = (resp.image.width, resp.image.height);
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(violation(format!("invalid image size {w}x{h}")));
    }
    if resp.regions.is_empty() {
        return Err(violation("no regions returned".into()));
    }
    let mut boxes = Vec::new();
    let mut features = Vec::new();
    for (i, region) in resp.regions.into_iter().take(max_regions).enumerate() {
        let [x1, y1, x2, y2] = region.bbox;
        if !region.bbox.iter().all(|v| v.is_finite()) {
            return Err(violation(format!("region {i} box is not finite")));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(violation(format!("region {i} box {:?} is empty", region.bbox)));
        }
        if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
            return Err(violation(format!(
                "region {i} box {:?} lies outside the {w}x{h} image",
                region.bbox
            )));
        }
        if region.feature.len() != feature_dim {
            return Err(violation(format!(
                "region {i} has {} features, expected {feature_dim}",
                region.feature.len()
            )));
        }
        let feature: Vec<f32> = region.feature.iter().map(|&v| v as f32).collect();
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(violation(format!("region {i} has non-finite features")));
        }
        boxes.push([(x1 / w) as f32, (y1 / h) as f32, (x2 / w) as f32, (y2 / h) as f32]);
        features.push(feature);
    }
    let out = RegionFeatures { image_id: image_id.to_string(), boxes, features };
    out.validate(max_regions)?;
    Ok(out)
}

pub fn extract_url(endpoint: &str) -> String {
    format!("{}/extract", endpoint.trim_end_matches('/'))
}

/// Sends `image` to the remote extractor named by `spec`.
pub fn extract_external(
    image_id: &str,
    image: &[u8],
    spec: &ExtractorSpec,
) -> Result<RegionFeatures, FeatureError> {
    spec.validate()?;
    if spec.kind != ExtractorKind::External {
        return Err(FeatureError::InvalidSpec("spec is not an external extractor".into()));
    }
    let endpoint = spec.endpoint.as_deref().unwrap_or_default();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(TIMEOUT))
        .build()
        .into();
    let mut resp = agent
        .post(extract_url(endpoint))
        .header("Content-Type", "application/octet-stream")
        .header("X-Max-Regions", spec.max_regions.to_string())
        .header("X-Feature-Dim", spec.feature_dim.to_string())
        .send(image)
        .map_err(|e| FeatureError::ExtractorUnavailable(e.to_string()))?;
    let body = resp
        .body_mut()
        .with_config()
        .limit(RESPONSE_LIMIT)
        .read_to_string()
        .map_err(|e| FeatureError::ExtractorUnavailable(e.to_string()))?;
    let parsed: ExtractResponse =
        serde_json::from_str(&body).map_err(|e| violation(e.to_string()))?;
    normalize_response(image_id, parsed, spec.max_regions, spec.feature_dim)
}
