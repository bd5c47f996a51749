//! Random attention traces and naive nested-loop sums over them.

use ndarray::Array2;
use rand::Rng;
use vqa_core::model::{AttentionMap, AttentionTrace, Stream, TokenMap};

/// A random row-stochastic matrix; columns flagged in `masked` get zero.
pub fn stochastic<R: Rng>(rng: &mut R, rows: usize, masked: &[bool]) -> Array2<f64> {
    let cols = masked.len();
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        // occasional sharp rows and exact ties
        let peaked = rng.random_bool(0.2);
        let mut total = 0.0;
        for j in 0..cols {
            if masked[j] {
                continue;
            }
            let w: f64 = if peaked { rng.random_range(0..2) as f64 } else { rng.random_range(0.0..1.0) };
            m[[i, j]] = w;
            total += w;
        }
        if total == 0.0 {
            let first = masked.iter().position(|&x| !x).expect("an unmasked key");
            m[[i, first]] = 1.0;
            total = 1.0;
        }
        for j in 0..cols {
            m[[i, j]] /= total;
        }
    }
    m
}

fn map(stream: Stream, layer: usize, head: usize, q: usize, k: usize, weights: Array2<f64>) -> AttentionMap {
    AttentionMap {
        stream,
        layer,
        in_cross_layer: matches!(stream, Stream::CrossLangToVision | Stream::CrossVisionToLang),
        head,
        query_offset: q,
        key_offset: k,
        weights,
    }
}

/// Single-stream layout `[CLS] q [SEP] regions pad*` with L, H ≤ 4 and
/// T ≤ 12.
pub fn random_single<R: Rng>(rng: &mut R) -> (AttentionTrace, TokenMap) {
    let layers = rng.random_range(1..=4);
    let heads = rng.random_range(1..=4);
    let n_q = rng.random_range(1..=4);
    let n_r = rng.random_range(1..=12 - n_q - 2);
    let n_pad = rng.random_range(0..=12 - n_q - 2 - n_r);
    let real = n_q + 2;
    let t = real + n_r + n_pad;
    let masked: Vec<bool> = (0..t).map(|i| i >= real + n_r).collect();
    let mut maps = Vec::new();
    for l in 0..layers {
        for h in 0..heads {
            maps.push(map(Stream::Joint, l, h, 0, 0, stochastic(rng, t, &masked)));
        }
    }
    let token_map = TokenMap {
        total_len: t,
        question_positions: 1..n_q + 1,
        region_positions: real..real + n_r,
        special_positions: vec![0, n_q + 1],
        padding_positions: (real + n_r..t).collect(),
    };
    (AttentionTrace { maps }, token_map)
}

/// Dual-stream layout: language `[CLS] q [SEP] pad*` then regions, with
/// self, cross and post-cross matrices; T ≤ 12.
pub fn random_dual<R: Rng>(rng: &mut R) -> (AttentionTrace, TokenMap) {
    let heads = rng.random_range(1..=4);
    let (l_lang, l_vis, l_cross) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
    let n_q = rng.random_range(1..=4);
    let n_pad = rng.random_range(0..=2);
    let t_lang = n_q + 2 + n_pad;
    let n_r = rng.random_range(1..=12 - t_lang);
    let lang_mask: Vec<bool> = (0..t_lang).map(|i| i >= n_q + 2).collect();
    let vis_mask = vec![false; n_r];
    let mut maps = Vec::new();
    for h in 0..heads {
        for l in 0..l_lang + l_cross {
            maps.push(map(Stream::Language, l, h, 0, 0, stochastic(rng, t_lang, &lang_mask)));
        }
        for l in 0..l_vis + l_cross {
            maps.push(map(Stream::Vision, l, h, t_lang, t_lang, stochastic(rng, n_r, &vis_mask)));
        }
        for l in 0..l_cross {
            maps.push(map(Stream::CrossLangToVision, l, h, 0, t_lang, stochastic(rng, t_lang, &vis_mask)));
            maps.push(map(Stream::CrossVisionToLang, l, h, t_lang, 0, stochastic(rng, n_r, &lang_mask)));
        }
    }
    let token_map = TokenMap {
        total_len: t_lang + n_r,
        question_positions: 1..n_q + 1,
        region_positions: t_lang..t_lang + n_r,
        special_positions: vec![0, n_q + 1],
        padding_positions: (n_q + 2..t_lang).collect(),
    };
    (AttentionTrace { maps }, token_map)
}

fn counts(stream: Stream) -> bool {
    matches!(stream, Stream::Joint | Stream::CrossLangToVision)
}

fn entry(m: &AttentionMap, q: usize, k: usize) -> Option<f64> {
    let i = q.checked_sub(m.query_offset)?;
    let j = k.checked_sub(m.key_offset)?;
    (i < m.weights.nrows() && j < m.weights.ncols()).then(|| m.weights[[i, j]])
}

/// Per-region sums by looping over (layer, head, query, key) in global
/// positions.
pub fn naive_scores(trace: &AttentionTrace, tm: &TokenMap) -> Vec<f64> {
    let n = tm.region_positions.len();
    let mut scores = vec![0.0; n];
    let layers = trace.maps.iter().map(|m| m.layer).max().map_or(0, |l| l + 1);
    let heads = trace.maps.iter().map(|m| m.head).max().map_or(0, |h| h + 1);
    for layer in 0..layers {
        for head in 0..heads {
            for m in trace.maps.iter().filter(|m| m.layer == layer && m.head == head && counts(m.stream)) {
                for q in 0..tm.total_len {
                    if tm.padding_positions.contains(&q) {
                        continue;
                    }
                    for k in 0..tm.total_len {
                        if let Some(a) = entry(m, q, k) {
                            if tm.region_positions.contains(&k) {
                                scores[k - tm.region_positions.start] += a;
                            }
                        }
                    }
                }
            }
        }
    }
    scores
}

/// Mass over every key position of the included rows, and the number of
/// such rows (the value the mass must equal).
pub fn naive_mass(trace: &AttentionTrace, tm: &TokenMap) -> (f64, f64) {
    let mut mass = 0.0;
    let mut rows = 0;
    for m in trace.maps.iter().filter(|m| counts(m.stream)) {
        for q in 0..tm.total_len {
            if tm.padding_positions.contains(&q) || entry(m, q, m.key_offset).is_none() {
                continue;
            }
            rows += 1;
            for k in 0..tm.total_len {
                mass += entry(m, q, k).unwrap_or(0.0);
            }
        }
    }
    (mass, rows as f64)
}

/// Indices of the `k` best scores: stable sort by descending score, so
/// ties keep ascending index order.
pub fn full_sort_prefix(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    idx.truncate(k);
    idx
}

/// Random non-negative scores with many exact ties.
pub fn random_scores<R: Rng>(rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(1..=40);
    let levels = rng.random_range(1..=6);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                rng.random_range(0..levels) as f64
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect()
}
