//! Small synthetic images and archives, used by tests and the bundled
//! sample assets.

use std::io::{Cursor, Write};

use image::{ImageBuffer, Rgb, RgbImage};
use zip::write::SimpleFileOptions;

/// A deterministic RGB pattern; different seeds give different pixels.
pub fn pattern_image(width: u32, height: u32, seed: u32) -> RgbImage {
    ImageBuffer::from_fn(width, height, |x, y| {
        let s = seed.wrapping_mul(2_654_435_761);
        Rgb([
            (x.wrapping_mul(7).wrapping_add(s) % 256) as u8,
            (y.wrapping_mul(13).wrapping_add(s >> 8) % 256) as u8,
            ((x ^ y).wrapping_add(s >> 16) % 256) as u8,
        ])
    })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn png_bytes(width: u32, height: u32) -> Vec<u8> {
    encode_png(&pattern_image(width, height, 0))
}

pub fn png_bytes_seeded(width: u32, height: u32, seed: u32) -> Vec<u8> {
    encode_png(&pattern_image(width, height, seed))
}

/// Builds a ZIP archive; names ending in `/` become directory entries.
pub fn zip_bytes(entries: &[(&str, Vec<u8>)]) -> Vec<u8> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    for (name, bytes) in entries {
        if name.ends_with('/') {
            zip.add_directory(name.trim_end_matches('/'), opts)
                .expect("zip directory");
        } else {
            zip.start_file(*name, opts).expect("zip entry");
            zip.write_all(bytes).expect("zip write");
        }
    }
    zip.finish().expect("zip finish").into_inner()
}
