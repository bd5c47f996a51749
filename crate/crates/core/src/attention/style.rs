use serde::{Deserialize, Serialize};

use super::AttentionError;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_OPACITIES: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.25];

/// How ranked regions are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStyle {
    pub top_k: usize,
    pub color: [u8; 3],
    /// Opacity of the stroke for rank `i + 1`.
    pub opacities: Vec<f64>,
    pub line_width: u32,
    pub label: bool,
}

impl Default for AnnotationStyle {
    fn default() -> Self {
        AnnotationStyle {
            top_k: DEFAULT_TOP_K,
            color: [178, 0, 24],
            opacities: DEFAULT_OPACITIES.to_vec(),
            line_width: 3,
            label: true,
        }
    }
}

impl AnnotationStyle {
    /// Default style for `k` regions. Beyond five ranks the opacities fall
    /// linearly from 1.0 to 0.25.
    pub fn with_top_k(k: usize) -> Self {
        let opacities = if k <= DEFAULT_OPACITIES.len() {
            DEFAULT_OPACITIES.to_vec()
        } else {
            (0..k)
                .map(|i| 1.0 - 0.75 * i as f64 / (k - 1) as f64)
                .collect()
        };
        AnnotationStyle { top_k: k, opacities, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |m: &str| Err(AttentionError::InvalidStyle(m.to_string()));
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.opacities.len() < self.top_k {
            return bad("fewer intensity levels than top_k");
        }
        if self.opacities.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("opacities must lie in (0, 1]");
        }
        if self.opacities.windows(2).any(|w| w[1] >= w[0]) {
            return bad("intensity must strictly decrease with rank");
        }
        if self.line_width == 0 {
            return bad("line width must be positive");
        }
        Ok(())
    }

    /// Opacity for a 1-based rank.
    pub fn intensity(&self, rank: usize) -> f64 {
        let i = rank.saturating_sub(1).min(self.opacities.len() - 1);
        self.opacities[i]
    }
}
