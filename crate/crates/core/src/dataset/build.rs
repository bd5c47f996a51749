use std::collections::BTreeMap;

use super::{
    autofill_answers, dedupe, drop_invalid_refs, ingest_images, parse_qa_csv, CleanReport,
    DatasetError, ImageRecord, ImageStatus, Level, QaEntry, ValidationOutcome, MAX_IMAGE_SIDE,
};
use crate::text::collapse_whitespace;

/// Everything produced by one cleaning run.
#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub entries: Vec<QaEntry>,
    pub images: Vec<ImageRecord>,
    /// Raw bytes of every ingested image, keyed by image id.
    pub image_bytes: BTreeMap<String, Vec<u8>>,
    pub report: CleanReport,
    pub outcome: ValidationOutcome,
}

impl DatasetBuild {
    fn failed(err: DatasetError, images: Vec<ImageRecord>, report: CleanReport) -> Self {
        Self {
            entries: Vec::new(),
            images,
            image_bytes: BTreeMap::new(),
            report,
            outcome: ValidationOutcome::error(vec![err.to_string()]),
        }
    }

    pub fn valid_images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(|r| r.is_valid())
    }
}

fn id_list(records: &[&ImageRecord]) -> String {
    const SHOWN: usize = 5;
    let mut s = records
        .iter()
        .take(SHOWN)
        .map(|r| r.image_id.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    if records.len() > SHOWN {
        s.push_str(&format!(" and {} more", records.len() - SHOWN));
    }
    s
}

/// Runs ingest, parse, dedupe, reference filtering and autofill, in that
/// order. Failures are reported through the outcome rather than returned.
pub fn build_dataset(archive: &[u8], csv: &[u8]) -> DatasetBuild {
    let ingested = match ingest_images(archive) {
        Ok(a) => a,
        Err(e) => return DatasetBuild::failed(e, Vec::new(), CleanReport::default()),
    };
    let oversized: Vec<&ImageRecord> = ingested
        .records
        .iter()
        .filter(|r| r.status == ImageStatus::Oversized)
        .collect();
    let unreadable: Vec<&ImageRecord> = ingested
        .records
        .iter()
        .filter(|r| r.status == ImageStatus::Unreadable)
        .collect();
    let mut report = CleanReport {
        n_oversized_images: oversized.len(),
        n_unreadable_images: unreadable.len(),
        ..CleanReport::default()
    };

    let mut warnings = Vec::new();
    if !oversized.is_empty() {
        warnings.push(format!(
            "{} image(s) exceed {MAX_IMAGE_SIDE} pixels and will be left out: {}.",
            oversized.len(),
            id_list(&oversized)
        ));
    }
    if !unreadable.is_empty() {
        warnings.push(format!(
            "{} image(s) could not be read and will be left out: {}.",
            unreadable.len(),
            id_list(&unreadable)
        ));
    }
    let has_problem_images = !warnings.is_empty();
    let mut notes = ingested.warnings.clone();

    let rows = match parse_qa_csv(csv) {
        Ok(rows) => rows,
        Err(e) => return DatasetBuild::failed(e, ingested.records, report),
    };
    report.n_input_rows = rows.len();

    let (rows, n_dup) = dedupe(rows);
    report.n_duplicates_removed = n_dup;
    let (rows, n_bad_ref) = drop_invalid_refs(rows, &ingested.records);

    let mut entries = Vec::with_capacity(rows.len());
    let mut n_no_answers = 0;
    let mut n_no_question = 0;
    for row in rows {
        // a question needs at least one word to be tokenized
        if !row.question.chars().any(char::is_alphanumeric) {
            n_no_question += 1;
            continue;
        }
        match autofill_answers(&row) {
            Ok((answers, filled)) => {
                report.n_autofilled += usize::from(filled);
                entries.push(QaEntry {
                    question_id: entries.len() as u64,
                    image_id: row.image_id,
                    question: collapse_whitespace(&row.question),
                    answers,
                });
            }
            Err(_) => n_no_answers += 1,
        }
    }
    report.n_invalid_image_refs_removed = n_bad_ref + n_no_answers + n_no_question;
    report.n_output_entries = entries.len();

    if n_dup > 0 {
        notes.push(format!("Removed {n_dup} duplicate image/question pair(s)."));
    }
    if n_bad_ref > 0 {
        notes.push(format!("Removed {n_bad_ref} question(s) without a valid image."));
    }
    if n_no_answers > 0 {
        notes.push(format!("Removed {n_no_answers} question(s) with no answers."));
    }
    if n_no_question > 0 {
        notes.push(format!("Removed {n_no_question} row(s) with an empty question."));
    }
    if report.n_autofilled > 0 {
        notes.push(format!(
            "Filled answers up to ten for {} question(s).",
            report.n_autofilled
        ));
    }

    let n_valid_images = ingested.n_valid();
    let outcome = if n_valid_images == 0 || entries.is_empty() {
        let mut messages = Vec::new();
        if n_valid_images == 0 {
            messages.push("No valid image was found in the uploaded archive.".to_string());
        }
        if entries.is_empty() {
            messages.push("No valid question entries remain after cleaning.".to_string());
        }
        messages.extend(warnings);
        messages.extend(notes);
        ValidationOutcome { level: Level::Error, messages }
    } else if has_problem_images {
        let mut messages = warnings;
        messages.push(format!(
            "You can fine-tune with the remaining {n_valid_images} image(s) and {} question(s), or resubmit.",
            entries.len()
        ));
        messages.extend(notes);
        ValidationOutcome { level: Level::Warning, messages }
    } else {
        let mut messages = vec![format!(
            "All {n_valid_images} image(s) meet the size limit; {} question(s) are ready.",
            entries.len()
        )];
        messages.extend(notes);
        ValidationOutcome { level: Level::Success, messages }
    };

    DatasetBuild {
        entries,
        images: ingested.records,
        image_bytes: ingested.bytes,
        report,
        outcome,
    }
}
