use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use std::io::Cursor;

use super::{AnnotationStyle, AttentionError, RegionScore};

/// Encoded PNG plus warnings for boxes that had to be clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotated {
    pub png: Vec<u8>,
    pub warnings: Vec<AttentionError>,
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// Scale a normalized box to pixels, clamping to the image. The error is
/// returned alongside the clamped box when clamping was needed.
pub fn denormalize(
    region: usize,
    b: [f32; 4],
    width: u32,
    height: u32,
) -> (PixelBox, Option<AttentionError>) {
    let scale = |v: f32, size: u32| (f64::from(v) * f64::from(size)).round();
    let raw = [
        scale(b[0], width),
        scale(b[1], height),
        scale(b[2], width),
        scale(b[3], height),
    ];
    let out = raw.iter().any(|v| !v.is_finite() || *v < 0.0)
        || raw[2] > f64::from(width)
        || raw[3] > f64::from(height);
    let clamp = |v: f64, size: u32| if v.is_finite() { v.clamp(0.0, f64::from(size)) as u32 } else { 0 };
    let mut x0 = clamp(raw[0], width);
    let mut y0 = clamp(raw[1], height);
    let mut x1 = clamp(raw[2], width).max(x0);
    let mut y1 = clamp(raw[3], height).max(y0);
    // keep at least one pixel so every ranked region stays visible
    if x1 == x0 {
        if x1 < width { x1 += 1 } else { x0 = x0.saturating_sub(1) }
    }
    if y1 == y0 {
        if y1 < height { y1 += 1 } else { y0 = y0.saturating_sub(1) }
    }
    let warning = out.then_some(AttentionError::OutOfBounds { region });
    (PixelBox { x0, y0, x1, y1 }, warning)
}

fn blend(img: &mut RgbImage, x: u32, y: u32, color: [u8; 3], alpha: f64) {
    let p = img.get_pixel_mut(x, y);
    for (c, &t) in p.0.iter_mut().zip(&color) {
        let v = alpha * f64::from(t) + (1.0 - alpha) * f64::from(*c);
        *c = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// Pixels of a stroke drawn inside the box edge.
pub fn stroke_pixels(b: PixelBox, line_width: u32) -> impl Iterator<Item = (u32, u32)> {
    let w = line_width;
    (b.y0..b.y1).flat_map(move |y| {
        (b.x0..b.x1).filter_map(move |x| {
            let edge = x < b.x0 + w || x + w >= b.x1 || y < b.y0 + w || y + w >= b.y1;
            edge.then_some((x, y))
        })
    })
}

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

const GLYPH_SCALE: u32 = 2;

/// Badge with the rank number in the top-left corner of the box. Returns
/// the covered rectangle.
fn draw_label(img: &mut RgbImage, b: PixelBox, rank: usize, color: [u8; 3], alpha: f64) -> PixelBox {
    let text = rank.to_string();
    let pad = 1;
    let glyph_w = 3 * GLYPH_SCALE;
    let badge_w = pad * 2 + text.len() as u32 * (glyph_w + GLYPH_SCALE) - GLYPH_SCALE;
    let badge_h = pad * 2 + 5 * GLYPH_SCALE;
    let area = PixelBox {
        x0: b.x0,
        y0: b.y0,
        x1: (b.x0 + badge_w).min(img.width()),
        y1: (b.y0 + badge_h).min(img.height()),
    };
    for y in area.y0..area.y1 {
        for x in area.x0..area.x1 {
            blend(img, x, y, color, alpha);
        }
    }
    for (n, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[usize::from(ch - b'0')];
        let gx = area.x0 + pad + n as u32 * (glyph_w + GLYPH_SCALE);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let x = gx + col * GLYPH_SCALE + dx;
                        let y = area.y0 + pad + row as u32 * GLYPH_SCALE + dy;
                        if x < area.x1 && y < area.y1 {
                            img.put_pixel(x, y, Rgb([255, 255, 255]));
                        }
                    }
                }
            }
        }
    }
    area
}

/// Pixel areas `annotate` may touch for the given inputs: stroke pixels and
/// label badges.
pub fn touched_pixels(
    width: u32,
    height: u32,
    boxes: &[[f32; 4]],
    ranked: &[RegionScore],
    style: &AnnotationStyle,
) -> Vec<bool> {
    let mut mask = vec![false; (width * height) as usize];
    for r in ranked.iter().take(style.top_k) {
        let Some(&b) = boxes.get(r.region_index) else { continue };
        let (pb, _) = denormalize(r.region_index, b, width, height);
        for (x, y) in stroke_pixels(pb, style.line_width) {
            mask[(y * width + x) as usize] = true;
        }
        if style.label {
            let mut scratch = RgbImage::new(width, height);
            let a = draw_label(&mut scratch, pb, r.rank, [0, 0, 0], 1.0);
            for y in a.y0..a.y1 {
                for x in a.x0..a.x1 {
                    mask[(y * width + x) as usize] = true;
                }
            }
        }
    }
    mask
}

/// Draw the ranked regions onto a copy of `image`, lowest rank first so the
/// strongest region ends up on top.
pub fn annotate_rgb(
    image: &RgbImage,
    boxes: &[[f32; 4]],
    ranked: &[RegionScore],
    style: &AnnotationStyle,
) -> Result<(RgbImage, Vec<AttentionError>), AttentionError> {
    style.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(AttentionError::EmptyImage);
    }
    let mut out = image.clone();
    let mut warnings = Vec::new();
    let selected: Vec<&RegionScore> = ranked.iter().take(style.top_k).collect();
    let mut placed = Vec::with_capacity(selected.len());
    for r in &selected {
        let b = *boxes
            .get(r.region_index)
            .ok_or(AttentionError::MissingBox { region: r.region_index })?;
        let (pb, warn) = denormalize(r.region_index, b, w, h);
        warnings.extend(warn);
        placed.push((pb, r.rank));
    }
    for &(pb, rank) in placed.iter().rev() {
        let alpha = style.intensity(rank);
        for (x, y) in stroke_pixels(pb, style.line_width) {
            blend(&mut out, x, y, style.color, alpha);
        }
    }
    if style.label {
        for &(pb, rank) in placed.iter().rev() {
            draw_label(&mut out, pb, rank, style.color, style.intensity(rank));
        }
    }
    Ok((out, warnings))
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, AttentionError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| AttentionError::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Annotate and encode as PNG.
pub fn annotate(
    image: &DynamicImage,
    boxes: &[[f32; 4]],
    ranked: &[RegionScore],
    style: &AnnotationStyle,
) -> Result<Annotated, AttentionError> {
    let (img, warnings) = annotate_rgb(&image.to_rgb8(), boxes, ranked, style)?;
    Ok(Annotated { png: encode_png(&img)?, warnings })
}
