//! Small synthetic image/question datasets whose answers are visible in the
//! pixels.

use std::collections::BTreeMap;
use std::io::{Cursor, Write};

use image::{ImageFormat, Rgb, RgbImage};
use vqa_core::dataset::QaEntry;

pub const COLORS: [(&str, [u8; 3]); 5] = [
    ("red", [220, 20, 20]),
    ("green", [20, 180, 40]),
    ("blue", [30, 40, 220]),
    ("yellow", [240, 210, 10]),
    ("white", [255, 255, 255]),
];

pub const COLOR_QUESTION: &str = "What color is the square?";
pub const SIDE_QUESTION: &str = "Which side is the square on?";

/// Gray canvas with a coloured square in the left or right half.
pub fn scene(size: u32, color: [u8; 3], left: bool) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([90, 90, 90]));
    let side = size / 2 - size / 8;
    let x0 = if left { size / 16 } else { size / 2 + size / 16 };
    let y0 = size / 4;
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            img.put_pixel(x, y, Rgb(color));
        }
    }
    img
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png");
    out.into_inner()
}

/// One image per (colour, side) pair: ids like `red_left`.
pub fn scene_images(size: u32) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for (name, rgb) in COLORS {
        for left in [true, false] {
            let id = format!("{name}_{}", if left { "left" } else { "right" });
            out.insert(id, png(&scene(size, rgb, left)));
        }
    }
    out
}

/// The 20-question dataset: a colour and a side question per image.
pub fn scene_entries() -> Vec<QaEntry> {
    let mut entries = Vec::new();
    for (name, _) in COLORS {
        for side in ["left", "right"] {
            let image_id = format!("{name}_{side}");
            for (question, answer) in [(COLOR_QUESTION, name), (SIDE_QUESTION, side)] {
                entries.push(QaEntry {
                    question_id: entries.len() as u64,
                    image_id: image_id.clone(),
                    question: question.to_string(),
                    answers: vec![answer.to_string(); 10],
                });
            }
        }
    }
    entries
}

pub fn zip_of(files: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default();
    for (name, bytes) in files {
        zip.start_file(name.as_str(), opts).unwrap();
        zip.write_all(bytes).unwrap();
    }
    zip.finish().unwrap().into_inner()
}

/// CSV in the upload format. Answer lists may be shorter than ten.
pub fn csv_of(rows: &[(String, String, Vec<String>)]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let mut header = vec!["image_id".to_string(), "question".to_string()];
    header.extend((1..=10).map(|i| format!("answer{i}")));
    w.write_record(&header).unwrap();
    for (image_id, question, answers) in rows {
        let mut rec = vec![image_id.clone(), question.clone()];
        rec.extend(answers.iter().cloned());
        w.write_record(&rec).unwrap();
    }
    w.into_inner().unwrap()
}

/// The scene dataset as an upload: (images ZIP, questions CSV).
pub fn scene_upload(size: u32) -> (Vec<u8>, Vec<u8>) {
    let images: Vec<(String, Vec<u8>)> = scene_images(size)
        .into_iter()
        .map(|(id, b)| (format!("images/{id}.png"), b))
        .collect();
    let rows: Vec<_> = scene_entries()
        .into_iter()
        .map(|e| (e.image_id, e.question, vec![e.answers[0].clone()]))
        .collect();
    (zip_of(&images), csv_of(&rows))
}

/// A flat PNG of the given size, cheap to encode even when large.
pub fn blank_png(width: u32, height: u32) -> Vec<u8> {
    png(&RgbImage::from_pixel(width, height, Rgb([120, 120, 120])))
}
