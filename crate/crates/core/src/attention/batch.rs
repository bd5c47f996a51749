use std::io::{Cursor, Write};

use rayon::prelude::*;
use zip::write::SimpleFileOptions;

use super::{aggregate_attention, annotate, select_top, AnnotationStyle, AttentionError};
use crate::model::{AttentionTrace, TokenMap};

const MAX_STEM_CHARS: usize = 100;
pub const ERROR_MANIFEST: &str = "errors.txt";

/// Casefold, replace runs of non-alphanumerics with one underscore, trim
/// underscores at the ends and cut to 100 characters.
pub fn sanitize_question(question: &str) -> String {
    let mut out = String::new();
    for c in question.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed: String = out.trim_matches('_').chars().take(MAX_STEM_CHARS).collect();
    let trimmed = trimmed.trim_end_matches('_');
    if trimmed.is_empty() {
        "question".to_string()
    } else {
        trimmed.to_string()
    }
}

pub fn annotated_file_name(question: &str, question_id: u64) -> String {
    format!("{}__{}.png", sanitize_question(question), question_id)
}

/// One answered question whose regions should be drawn.
#[derive(Debug, Clone, Copy)]
pub struct AnnotationItem<'a> {
    pub question_id: u64,
    pub question: &'a str,
    /// Encoded image.
    pub image: &'a [u8],
    pub boxes: &'a [[f32; 4]],
    pub trace: &'a AttentionTrace,
    pub token_map: &'a TokenMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFailure {
    pub question_id: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BatchArchive {
    pub zip: Vec<u8>,
    /// Entry names of the annotated images, in input order.
    pub entries: Vec<String>,
    pub failures: Vec<BatchFailure>,
    pub warnings: Vec<(u64, AttentionError)>,
}

/// Score, select and draw one item.
pub fn render_item(
    item: &AnnotationItem<'_>,
    style: &AnnotationStyle,
) -> Result<super::Annotated, AttentionError> {
    let image = image::load_from_memory(item.image)
        .map_err(|e| AttentionError::Decode(e.to_string()))?;
    let scores = aggregate_attention(item.trace, item.token_map)?;
    let top = select_top(&scores, style.top_k);
    annotate(&image, item.boxes, &top, style)
}

/// Render every item (in parallel) and pack the PNGs into one ZIP. Failed
/// items are listed in an `errors.txt` entry instead.
pub fn annotate_batch(
    items: &[AnnotationItem<'_>],
    style: &AnnotationStyle,
) -> Result<BatchArchive, AttentionError> {
    style.validate()?;
    let rendered: Vec<_> = items.par_iter().map(|it| render_item(it, style)).collect();

    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for (item, result) in items.iter().zip(rendered) {
        match result {
            Ok(a) => {
                let name = annotated_file_name(item.question, item.question_id);
                zip.start_file(name.as_str(), opts).map_err(zip_err)?;
                zip.write_all(&a.png).map_err(zip_err)?;
                warnings.extend(a.warnings.into_iter().map(|w| (item.question_id, w)));
                entries.push(name);
            }
            Err(e) => failures.push(BatchFailure {
                question_id: item.question_id,
                message: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() {
        zip.start_file(ERROR_MANIFEST, opts).map_err(zip_err)?;
        for f in &failures {
            writeln!(zip, "{}\t{}", f.question_id, f.message).map_err(zip_err)?;
        }
    }
    let zip = zip.finish().map_err(zip_err)?.into_inner();
    Ok(BatchArchive { zip, entries, failures, warnings })
}

fn zip_err(e: impl std::fmt::Display) -> AttentionError {
    AttentionError::Encode(e.to_string())
}
