//! Deterministic built-in extractor: one region per cell of a uniform grid.

use image::{DynamicImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::grid_side;
use super::{FeatureError, RegionFeatures};

/// Length of the per-cell statistics vector before expansion.
pub const BASE_DIM: usize = 30;
const PROJECTION_SEED: u64 = 0x5eed_f00d;
const FREQUENCIES: [f64; 3] = [1.0, 2.0, 4.0];

/// Pixel span `[start, end)` of cell `i` of `k` along a side of `len`
/// pixels; never empty.
fn cell_span(i: usize, k: usize, len: u32) -> (u32, u32) {
    let len = len as usize;
    let start = (i * len / k).min(len - 1);
    let end = ((i + 1) * len / k).max(start + 1).min(len);
    (start as u32, end as u32)
}

struct Stats {
    mean: [f64; 3],
    std: [f64; 3],
}

fn stats(img: &RgbImage, (x0, x1): (u32, u32), (y0, y1): (u32, u32)) -> Stats {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.get_pixel(x, y).0;
            for c in 0..3 {
                let v = p[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
    }
    Stats { mean, std }
}

/// Statistics of one cell: channel means, channel standard deviations,
/// channel means of its four quadrants, and a sinusoidal encoding of the
/// cell centre.
fn cell_base(img: &RgbImage, k: usize, row: usize, col: usize) -> [f64; BASE_DIM] {
    let (w, h) = img.dimensions();
    let xs = cell_span(col, k, w);
    let ys = cell_span(row, k, h);
    let whole = stats(img, xs, ys);
    let mut base = [0.0; BASE_DIM];
    base[..3].copy_from_slice(&whole.mean);
    base[3..6].copy_from_slice(&whole.std);
    let split = |(a, b): (u32, u32)| {
        let mid = a + (b - a) / 2;
        if mid == a {
            [(a, b), (a, b)]
        } else {
            [(a, mid), (mid, b)]
        }
    };
    let mut i = 6;
    for yq in split(ys) {
        for xq in split(xs) {
            base[i..i + 3].copy_from_slice(&stats(img, xq, yq).mean);
            i += 3;
        }
    }
    let cx = (col as f64 + 0.5) / k as f64;
    let cy = (row as f64 + 0.5) / k as f64;
    for f in FREQUENCIES {
        for v in [cx, cy] {
            let a = std::f64::consts::PI * f * v;
            base[i] = a.sin();
            base[i + 1] = a.cos();
            i += 2;
        }
    }
    debug_assert_eq!(i, BASE_DIM);
    base
}

/// Fixed expansion of a base vector to `dim` entries: the base itself,
/// followed by projections through a constant pseudo-random matrix.
fn expand(base: &[f64; BASE_DIM], projection: &[[f64; BASE_DIM]], dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|d| {
            if d < BASE_DIM {
                base[d] as f32
            } else {
                let row = &projection[d - BASE_DIM];
                row.iter().zip(base).map(|(p, b)| p * b).sum::<f64>() as f32
            }
        })
        .collect()
}

fn projection(dim: usize) -> Vec<[f64; BASE_DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = (3.0 / BASE_DIM as f64).sqrt();
    (BASE_DIM..dim.max(BASE_DIM))
        .map(|_| std::array::from_fn(|_| rng.random_range(-scale..scale)))
        .collect()
}

/// Splits `image` into a k×k grid (k² the largest square ≤ `max_regions`)
/// and describes each cell by a `feature_dim`-long vector.
pub fn extract_grid(
    image_id: &str,
    image: &DynamicImage,
    max_regions: usize,
    feature_dim: usize,
) -> Result<RegionFeatures, FeatureError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(FeatureError::UnreadableImage(format!("{image_id} has no pixels")));
    }
    if feature_dim == 0 {
        return Err(FeatureError::InvalidSpec("feature_dim must be positive".into()));
    }
    let rgb = image.to_rgb8();
    let k = grid_side(max_regions);
    let projection = projection(feature_dim);
    let mut boxes = Vec::with_capacity(k * k);
    let mut features = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            boxes.push([
                col as f32 / k as f32,
                row as f32 / k as f32,
                (col + 1) as f32 / k as f32,
                (row + 1) as f32 / k as f32,
            ]);
            features.push(expand(&cell_base(&rgb, k, row, col), &projection, feature_dim));
        }
    }
    Ok(RegionFeatures { image_id: image_id.to_string(), boxes, features })
}

pub fn extract_grid_bytes(
    image_id: &str,
    bytes: &[u8],
    max_regions: usize,
    feature_dim: usize,
) -> Result<RegionFeatures, FeatureError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| FeatureError::UnreadableImage(format!("{image_id}: {e}")))?;
    extract_grid(image_id, &img, max_regions, feature_dim)
}
