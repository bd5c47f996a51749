//! Bundled sample assets: one evaluation image with canned questions and a
//! small downloadable dataset in the upload format.

use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;

pub const SAMPLE_DIR: &str = "sample";
pub const SAMPLE_IMAGE: &str = "sample.png";
pub const SAMPLE_QUESTIONS: &str = "questions.json";
pub const SAMPLE_DATASET_ZIP: &str = "sample_dataset.zip";
pub const SAMPLE_DATASET_CSV: &str = "sample_dataset.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
        }
    }
}

pub const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 30, 30]),
    ("green", [30, 170, 60]),
    ("blue", [30, 60, 220]),
    ("yellow", [235, 200, 20]),
];

/// White canvas with one filled shape.
pub fn shape_scene(width: u32, height: u32, shape: Shape, color: [u8; 3], offset: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([250, 250, 250]));
    let side = width.min(height) / 2;
    let x0 = (width / 8 + offset * width / 16).min(width - side);
    let y0 = (height - side) / 2;
    let r = side as f64 / 2.0;
    let (cx, cy) = (x0 as f64 + r, y0 as f64 + r);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let inside = match shape {
                Shape::Square => true,
                Shape::Circle => {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    dx * dx + dy * dy <= r * r
                }
            };
            if inside {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
    img
}

fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// `(archive, csv)` of a dataset with one image per shape/colour pair and
/// two questions per image.
pub fn sample_dataset() -> (Vec<u8>, Vec<u8>) {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image_id".to_string(), "question".to_string()];
    header.extend((1..=10).map(|i| format!("answer{i}")));
    csv.write_record(&header).expect("csv header");
    let mut n = 0;
    for shape in [Shape::Square, Shape::Circle] {
        for (name, rgb) in COLORS {
            let id = format!("{}_{}", name, shape.name());
            let img = shape_scene(96, 72, shape, rgb, n % 4);
            zip.start_file(format!("images/{id}.png"), opts).expect("zip entry");
            zip.write_all(&png(&img)).expect("zip write");
            let mut color_row = vec![id.clone(), "What color is the shape?".into()];
            color_row.extend(std::iter::repeat_n(name.to_string(), 10));
            csv.write_record(&color_row).expect("csv row");
            // short answer lists are filled up during cleaning
            let shape_row = vec![id, "What shape is it?".into(), shape.name().into(), shape.name().into()];
            let mut shape_row = shape_row;
            shape_row.resize(header.len(), String::new());
            csv.write_record(&shape_row).expect("csv row");
            n += 1;
        }
    }
    let zip = zip.finish().expect("zip finish").into_inner();
    (zip, csv.into_inner().expect("csv flush"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleQuestions {
    pub questions: Vec<String>,
}

pub fn sample_questions() -> SampleQuestions {
    SampleQuestions {
        questions: vec![
            "What color is the shape?".into(),
            "What shape is it?".into(),
        ],
    }
}

pub fn sample_dir(public_dir: &Path) -> PathBuf {
    public_dir.join(SAMPLE_DIR)
}

/// Writes the sample files if they are not there yet.
pub fn install(public_dir: &Path) -> std::io::Result<()> {
    let dir = sample_dir(public_dir);
    std::fs::create_dir_all(&dir)?;
    let write_missing = |name: &str, bytes: &dyn Fn() -> Vec<u8>| -> std::io::Result<()> {
        let path = dir.join(name);
        if !path.exists() {
            vqa_core::write_atomic(&path, &bytes())?;
        }
        Ok(())
    };
    write_missing(SAMPLE_IMAGE, &|| {
        png(&shape_scene(320, 240, Shape::Circle, COLORS[2].1, 2))
    })?;
    write_missing(SAMPLE_QUESTIONS, &|| {
        serde_json::to_vec_pretty(&sample_questions()).expect("questions serialize")
    })?;
    let (zip, csv) = sample_dataset();
    write_missing(SAMPLE_DATASET_ZIP, &|| zip.clone())?;
    write_missing(SAMPLE_DATASET_CSV, &|| csv.clone())?;
    Ok(())
}

/// Reads the installed sample, if complete.
pub fn load(public_dir: &Path) -> Option<SampleQuestions> {
    let dir = sample_dir(public_dir);
    if !dir.join(SAMPLE_IMAGE).is_file() {
        return None;
    }
    let q: SampleQuestions = serde_json::from_slice(&std::fs::read(dir.join(SAMPLE_QUESTIONS)).ok()?).ok()?;
    (!q.questions.is_empty()).then_some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vqa_core::dataset::{build_dataset, Level};

    #[test]
    fn sample_dataset_cleans_successfully() {
        let (zip, csv) = sample_dataset();
        let build = build_dataset(&zip, &csv);
        assert_eq!(build.outcome.level, Level::Success, "{:?}", build.outcome);
        assert_eq!(build.entries.len(), 16);
        assert_eq!(build.report.n_autofilled, 8);
    }

    #[test]
    fn install_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        install(dir.path()).unwrap();
        let first = std::fs::read(sample_dir(dir.path()).join(SAMPLE_IMAGE)).unwrap();
        install(dir.path()).unwrap();
        assert_eq!(first, std::fs::read(sample_dir(dir.path()).join(SAMPLE_IMAGE)).unwrap());
        assert!(load(dir.path()).is_some());
    }
}
