use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Which attention block produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Self-attention over the concatenated sequence (single-stream).
    Joint,
    Language,
    Vision,
    CrossLangToVision,
    CrossVisionToLang,
}

/// One head's attention weights. Row `i` is query position
/// `query_offset + i` and column `j` key position `key_offset + j`, both in
/// the global numbering of the [`TokenMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub stream: Stream,
    /// Layer index within its stream; for dual-stream language/vision maps
    /// the cross block's self-attention layers follow the encoder layers.
    pub layer: usize,
    /// True for matrices produced inside a cross-modality layer.
    pub in_cross_layer: bool,
    pub head: usize,
    pub query_offset: usize,
    pub key_offset: usize,
    pub weights: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub maps: Vec<AttentionMap>,
}

impl AttentionTrace {
    pub fn of_stream(&self, stream: Stream) -> impl Iterator<Item = &AttentionMap> {
        self.maps.iter().filter(move |m| m.stream == stream)
    }
}

/// Position layout of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMap {
    pub total_len: usize,
    pub question_positions: Range<usize>,
    pub region_positions: Range<usize>,
    /// Classification and separator tokens.
    pub special_positions: Vec<usize>,
    pub padding_positions: Vec<usize>,
}

impl TokenMap {
    pub fn n_regions(&self) -> usize {
        self.region_positions.len()
    }

    pub fn is_padding(&self, pos: usize) -> bool {
        self.padding_positions.contains(&pos)
    }

    /// Global position of region `j`.
    pub fn region_position(&self, j: usize) -> usize {
        self.region_positions.start + j
    }
}
