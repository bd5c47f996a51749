use serde::{Deserialize, Serialize};

use super::AttentionError;
use crate::model::{AttentionMap, AttentionTrace, Stream, TokenMap};

/// Aggregated attention received by one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region_index: usize,
    pub score: f64,
    /// 1-based position in descending score order, ties by lower index.
    pub rank: usize,
}

/// Matrices that contribute to region scores: every joint self-attention
/// layer of a single-stream model, and the language-to-vision
/// cross-attention of a dual-stream model.
pub fn is_included(map: &AttentionMap) -> bool {
    matches!(map.stream, Stream::Joint | Stream::CrossLangToVision)
}

fn padding_flags(token_map: &TokenMap) -> Vec<bool> {
    let mut flags = vec![false; token_map.total_len];
    for &p in &token_map.padding_positions {
        if let Some(f) = flags.get_mut(p) {
            *f = true;
        }
    }
    flags
}

fn is_padding(flags: &[bool], pos: usize) -> bool {
    flags.get(pos).copied().unwrap_or(true)
}

/// Sum over included matrices, heads and non-padding query rows of the
/// weight each region's key position receives. One score per region, in
/// region order, ranked.
pub fn aggregate_attention(
    trace: &AttentionTrace,
    token_map: &TokenMap,
) -> Result<Vec<RegionScore>, AttentionError> {
    let n = token_map.n_regions();
    let pad = padding_flags(token_map);
    let mut scores = vec![0.0; n];
    for map in trace.maps.iter().filter(|m| is_included(m)) {
        let cols = map.weights.ncols();
        let columns = (0..n)
            .map(|j| {
                token_map
                    .region_position(j)
                    .checked_sub(map.key_offset)
                    .filter(|&c| c < cols)
                    .ok_or(AttentionError::TokenMapMismatch {
                        region: j,
                        width: cols,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (i, row) in map.weights.rows().into_iter().enumerate() {
            if is_padding(&pad, map.query_offset + i) {
                continue;
            }
            for (s, &c) in scores.iter_mut().zip(&columns) {
                *s += row[c];
            }
        }
    }
    Ok(rank_scores(&scores))
}

/// Total weight of the included rows over all key positions, and the value
/// it must equal for row-stochastic matrices (one per included row).
pub fn attention_mass(trace: &AttentionTrace, token_map: &TokenMap) -> (f64, f64) {
    let pad = padding_flags(token_map);
    let mut total = 0.0;
    let mut rows = 0usize;
    for map in trace.maps.iter().filter(|m| is_included(m)) {
        for (i, row) in map.weights.rows().into_iter().enumerate() {
            if !is_padding(&pad, map.query_offset + i) {
                total += row.sum();
                rows += 1;
            }
        }
    }
    (total, rows as f64)
}

fn descending(a: &RegionScore, b: &RegionScore) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.region_index.cmp(&b.region_index))
}

/// Scores in region order, each with its rank among all regions.
pub fn rank_scores(scores: &[f64]) -> Vec<RegionScore> {
    let mut out: Vec<RegionScore> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| RegionScore { region_index: i, score: s, rank: 0 })
        .collect();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| descending(&out[a], &out[b]));
    for (r, i) in order.into_iter().enumerate() {
        out[i].rank = r + 1;
    }
    out
}

/// The `min(k, n)` highest-scoring regions, best first, ranked 1..
pub fn select_top(scores: &[RegionScore], k: usize) -> Vec<RegionScore> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(descending);
    sorted.truncate(k.max(1));
    for (r, s) in sorted.iter_mut().enumerate() {
        s.rank = r + 1;
    }
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn joint_map(layer: usize, head: usize, w: Array2<f64>) -> AttentionMap {
        AttentionMap {
            stream: Stream::Joint,
            layer,
            in_cross_layer: false,
            head,
            query_offset: 0,
            key_offset: 0,
            weights: w,
        }
    }

    fn token_map(t: usize, regions: std::ops::Range<usize>) -> TokenMap {
        TokenMap {
            total_len: t,
            question_positions: 1..regions.start - 1,
            region_positions: regions,
            special_positions: vec![0],
            padding_positions: vec![],
        }
    }

    #[test]
    fn uniform_attention() {
        let (layers, heads, t) = (3, 2, 8);
        let mut maps = Vec::new();
        for l in 0..layers {
            for h in 0..heads {
                maps.push(joint_map(l, h, Array2::from_elem((t, t), 1.0 / t as f64)));
            }
        }
        let tm = token_map(t, 4..8);
        let scores = aggregate_attention(&AttentionTrace { maps }, &tm).unwrap();
        let expected = (layers * heads * t) as f64 / t as f64;
        for s in &scores {
            assert!((s.score - expected).abs() < 1e-12);
        }
        assert_eq!(scores.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn one_hot_rows() {
        let t = 7;
        let tm = token_map(t, 3..7);
        let mut w = Array2::zeros((t, t));
        for q in 0..t {
            w[[q, tm.region_position(2)]] = 1.0;
        }
        let scores = aggregate_attention(&AttentionTrace { maps: vec![joint_map(0, 0, w)] }, &tm).unwrap();
        let v: Vec<f64> = scores.iter().map(|s| s.score).collect();
        assert_eq!(v, vec![0.0, 0.0, t as f64, 0.0]);
        assert_eq!(scores[2].rank, 1);
    }

    #[test]
    fn padding_queries_are_skipped() {
        let t = 6;
        let mut tm = token_map(t, 3..5);
        tm.padding_positions = vec![5];
        let w = Array2::from_elem((t, t), 1.0 / t as f64);
        let trace = AttentionTrace { maps: vec![joint_map(0, 0, w)] };
        let scores = aggregate_attention(&trace, &tm).unwrap();
        assert!((scores[0].score - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(attention_mass(&trace, &tm).1, 5.0);
    }

    #[test]
    fn narrow_matrix_is_a_mismatch() {
        let tm = token_map(10, 6..10);
        let trace = AttentionTrace { maps: vec![joint_map(0, 0, Array2::zeros((10, 8)))] };
        assert!(matches!(
            aggregate_attention(&trace, &tm),
            Err(AttentionError::TokenMapMismatch { region: 2, width: 8 })
        ));
    }

    #[test]
    fn select_top_examples() {
        let all = rank_scores(&[0.3, 0.1, 0.2]);
        assert_eq!(select_top(&all, 5).len(), 3);

        let top = select_top(&rank_scores(&[5.0, 1.0, 5.0, 0.0]), 2);
        assert_eq!(
            top.iter().map(|s| (s.region_index, s.rank)).collect::<Vec<_>>(),
            vec![(0, 1), (2, 2)]
        );
    }
}
