//! Random upload fixtures and a direct, quadratic implementation of the
//! cleaning rules to compare the pipeline against.

use std::io::{Cursor, Write};

use image::{ImageFormat, Rgb, RgbImage};
use rand::Rng;
use vqa_core::dataset::{CleanReport, Level};
use zip::write::SimpleFileOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Fits { width: u32, height: u32 },
    Oversized { width: u32, height: u32 },
    Garbage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Image { path: String, kind: ImageKind },
    Directory(String),
    Other { path: String, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub image_id: String,
    pub question: String,
    /// Answer cells as written, blanks included.
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub entries: Vec<Entry>,
    pub rows: Vec<Row>,
    pub shouting_header: bool,
    pub bom: bool,
}

fn encode(img: &RgbImage, format: ImageFormat) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, format).expect("encode");
    out.into_inner()
}

pub fn image_bytes(kind: ImageKind, path: &str) -> Vec<u8> {
    let solid = |w, h| RgbImage::from_pixel(w, h, Rgb([(w % 251) as u8, (h % 251) as u8, 90]));
    let format = if path.to_ascii_lowercase().ends_with(".bmp") {
        ImageFormat::Bmp
    } else {
        ImageFormat::Png
    };
    match kind {
        ImageKind::Fits { width, height } | ImageKind::Oversized { width, height } => {
            encode(&solid(width, height), format)
        }
        ImageKind::Garbage => b"definitely not an image".to_vec(),
    }
}

impl Case {
    pub fn zip_bytes(&self) -> Vec<u8> {
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let opts = SimpleFileOptions::default();
        for e in &self.entries {
            match e {
                Entry::Image { path, kind } => {
                    zip.start_file(path.as_str(), opts).unwrap();
                    zip.write_all(&image_bytes(*kind, path)).unwrap();
                }
                Entry::Directory(path) => zip.add_directory(path.as_str(), opts).unwrap(),
                Entry::Other { path, bytes } => {
                    zip.start_file(path.as_str(), opts).unwrap();
                    zip.write_all(bytes).unwrap();
                }
            }
        }
        zip.finish().unwrap().into_inner()
    }

    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        if self.bom {
            out.extend_from_slice("\u{feff}".as_bytes());
        }
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let mut header = vec!["image_id".to_string(), "question".to_string()];
        header.extend((1..=10).map(|i| format!("answer{i}")));
        if self.shouting_header {
            header.iter_mut().for_each(|h| *h = h.to_uppercase());
        }
        w.write_record(&header).unwrap();
        for r in &self.rows {
            let mut rec = vec![r.image_id.clone(), r.question.clone()];
            rec.extend(r.answers.iter().cloned());
            w.write_record(&rec).unwrap();
        }
        w.into_inner().unwrap()
    }

    pub fn random<R: Rng>(rng: &mut R) -> Case {
        let ids: Vec<String> = (0..8).map(|i| format!("img{i}")).collect();
        let mut entries = Vec::new();
        for _ in 0..rng.random_range(0..9) {
            let id = &ids[rng.random_range(0..ids.len())];
            let folder = ["", "photos/", "a/b/"][rng.random_range(0..3)];
            let ext = ["png", "PNG", "bmp"][rng.random_range(0..3)];
            let kind = match rng.random_range(0..20) {
                0..=12 => ImageKind::Fits {
                    width: rng.random_range(1..24),
                    height: rng.random_range(1..24),
                },
                13 => ImageKind::Fits { width: 1920, height: 1 },
                14..=16 => {
                    let (a, b) = [(1921, 1), (1, 1921), (2000, 3)][rng.random_range(0..3)];
                    ImageKind::Oversized { width: a, height: b }
                }
                _ => ImageKind::Garbage,
            };
            let path = format!("{folder}{id}.{ext}");
            // zip writers reject repeated names
            if entries.iter().all(|e| !matches!(e, Entry::Image { path: p, .. } if *p == path)) {
                entries.push(Entry::Image { path, kind });
            }
        }
        // archive clutter that must be ignored
        let clutter_at = |rng: &mut R, n: usize| rng.random_range(0..=n);
        if rng.random_bool(0.3) {
            let at = clutter_at(rng, entries.len());
            entries.insert(at, Entry::Directory("photos/".into()));
        }
        if rng.random_bool(0.3) {
            let at = clutter_at(rng, entries.len());
            entries.insert(at, Entry::Other { path: "readme.txt".into(), bytes: b"hello".to_vec() });
        }
        if rng.random_bool(0.3) {
            let at = clutter_at(rng, entries.len());
            entries.insert(at, Entry::Image { path: "__MACOSX/._img1.png".into(), kind: ImageKind::Garbage });
        }
        if rng.random_bool(0.2) {
            let at = clutter_at(rng, entries.len());
            entries.insert(at, Entry::Image { path: "._img2.png".into(), kind: ImageKind::Garbage });
        }

        let questions = [
            "What color is it?",
            "what  color is it?",
            " WHAT COLOR IS IT? ",
            "How many dogs?",
            "Is it big?",
            "Is it   BIG?",
            "???",
            "",
        ];
        let answers = ["red", " Red ", "blue", "two  cats", "yes", "", "   "];
        let mut rows = Vec::new();
        let n_rows = if rng.random_bool(0.05) { 0 } else { rng.random_range(1..40) };
        for _ in 0..n_rows {
            if rng.random_bool(0.03) {
                rows.push(Row { image_id: String::new(), question: String::new(), answers: vec![String::new(); 3] });
                continue;
            }
            let image_id = if rng.random_bool(0.1) {
                " img1 ".to_string()
            } else {
                format!("img{}", rng.random_range(0..10))
            };
            let n_answers = rng.random_range(0..=10);
            rows.push(Row {
                image_id,
                question: questions[rng.random_range(0..questions.len())].to_string(),
                answers: (0..n_answers)
                    .map(|_| answers[rng.random_range(0..answers.len())].to_string())
                    .collect(),
            });
        }
        Case {
            entries,
            rows,
            shouting_header: rng.random_bool(0.2),
            bom: rng.random_bool(0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefEntry {
    pub question_id: u64,
    pub image_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub entries: Vec<RefEntry>,
    pub report: CleanReport,
    pub level: Level,
}

fn squeeze(s: &str) -> String {
    let mut out = String::new();
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn fold(s: &str) -> String {
    squeeze(s).to_lowercase()
}

/// Image id of an archive path, or `None` when the entry is not an image.
fn id_of(path: &str) -> Option<String> {
    if path.ends_with('/') || path.split('/').any(|c| c == "__MACOSX") {
        return None;
    }
    let file = path.rsplit('/').next()?;
    let dot = file.rfind('.')?;
    let (stem, ext) = (&file[..dot], &file[dot + 1..]);
    let ok_ext = ["png", "jpg", "jpeg", "bmp"].contains(&ext.to_lowercase().as_str());
    (ok_ext && !stem.is_empty() && !stem.starts_with('.')).then(|| stem.to_string())
}

/// Cleans `case` by the letter of the rules, with no shared code.
pub fn reference_clean(case: &Case) -> Reference {
    // first image per id wins
    let mut images: Vec<(String, ImageKind)> = Vec::new();
    for e in &case.entries {
        if let Entry::Image { path, kind } = e {
            if let Some(id) = id_of(path) {
                if images.iter().all(|(seen, _)| *seen != id) {
                    images.push((id, *kind));
                }
            }
        }
    }
    let mut report = CleanReport::default();
    for (_, kind) in &images {
        match kind {
            ImageKind::Oversized { .. } => report.n_oversized_images += 1,
            ImageKind::Garbage => report.n_unreadable_images += 1,
            ImageKind::Fits { .. } => {}
        }
    }
    let valid: Vec<&str> = images
        .iter()
        .filter(|(_, k)| matches!(k, ImageKind::Fits { .. }))
        .map(|(id, _)| id.as_str())
        .collect();

    let rows: Vec<Row> = case
        .rows
        .iter()
        .map(|r| Row {
            image_id: r.image_id.trim().to_string(),
            question: r.question.trim().to_string(),
            answers: r.answers.iter().map(|a| a.trim().to_string()).collect(),
        })
        .filter(|r| !(r.image_id.is_empty() && r.question.is_empty() && r.answers.iter().all(String::is_empty)))
        .collect();
    if rows.is_empty() {
        return Reference { entries: Vec::new(), report, level: Level::Error };
    }
    report.n_input_rows = rows.len();

    let mut entries = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let duplicate = (0..i).any(|j| rows[j].image_id == row.image_id && fold(&rows[j].question) == fold(&row.question));
        if duplicate {
            report.n_duplicates_removed += 1;
            continue;
        }
        let given: Vec<String> = row.answers.iter().map(|a| squeeze(a)).filter(|a| !a.is_empty()).collect();
        let has_word = row.question.chars().any(|c| c.is_alphanumeric());
        if !valid.contains(&row.image_id.as_str()) || given.is_empty() || !has_word {
            report.n_invalid_image_refs_removed += 1;
            continue;
        }
        let mut answers = Vec::new();
        let mut k = 0;
        while answers.len() < 10 {
            answers.push(given[k % given.len()].clone());
            k += 1;
        }
        if given.len() != 10 {
            report.n_autofilled += 1;
        }
        entries.push(RefEntry {
            question_id: entries.len() as u64,
            image_id: row.image_id.clone(),
            question: squeeze(&row.question),
            answers,
        });
    }
    report.n_output_entries = entries.len();
    let level = if valid.is_empty() || entries.is_empty() {
        Level::Error
    } else if report.n_oversized_images + report.n_unreadable_images > 0 {
        Level::Warning
    } else {
        Level::Success
    };
    Reference { entries, report, level }
}
