use std::collections::HashSet;

use super::{DatasetError, ImageRecord, RawQaRow, ANSWERS_PER_QUESTION};
use crate::text::{collapse_whitespace, normalize_key};

fn header_key(h: &str) -> String {
    h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase()
}

/// Parses the questions CSV (`image_id, question, answer1..answer10`).
/// Answer columns are optional; blank answer cells are dropped.
pub fn parse_qa_csv(csv_bytes: &[u8]) -> Result<Vec<RawQaRow>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(csv_bytes);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DatasetError::MalformedCsv(e.to_string()))?
        .iter()
        .map(header_key)
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let image_col = find("image_id").ok_or_else(|| DatasetError::MissingColumn("image_id".into()))?;
    let question_col =
        find("question").ok_or_else(|| DatasetError::MissingColumn("question".into()))?;
    let answer_cols: Vec<usize> = (1..=ANSWERS_PER_QUESTION)
        .filter_map(|i| find(&format!("answer{i}")))
        .collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::MalformedCsv(e.to_string()))?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let cell = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        rows.push(RawQaRow {
            image_id: cell(image_col),
            question: cell(question_col),
            answers: answer_cols
                .iter()
                .map(|&i| cell(i))
                .filter(|a| !a.is_empty())
                .collect(),
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(rows)
}

/// Extends the provided answers to exactly ten by cyclic repetition.
/// Returns whether any filling happened.
pub fn autofill_answers(row: &RawQaRow) -> Result<(Vec<String>, bool), DatasetError> {
    let provided: Vec<String> = row
        .answers
        .iter()
        .map(|a| collapse_whitespace(a))
        .filter(|a| !a.is_empty())
        .collect();
    if provided.is_empty() {
        return Err(DatasetError::NoAnswers);
    }
    if provided.len() == ANSWERS_PER_QUESTION {
        return Ok((provided, false));
    }
    let filled = provided
        .iter()
        .cycle()
        .take(ANSWERS_PER_QUESTION)
        .cloned()
        .collect();
    Ok((filled, true))
}

/// Keeps the first row of each (image id, normalized question) pair.
pub fn dedupe(rows: Vec<RawQaRow>) -> (Vec<RawQaRow>, usize) {
    let before = rows.len();
    let mut seen = HashSet::new();
    let kept: Vec<RawQaRow> = rows
        .into_iter()
        .filter(|r| seen.insert((r.image_id.clone(), normalize_key(&r.question))))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Removes rows whose image id has no valid image.
pub fn drop_invalid_refs(rows: Vec<RawQaRow>, images: &[ImageRecord]) -> (Vec<RawQaRow>, usize) {
    let valid: HashSet<&str> = images
        .iter()
        .filter(|r| r.is_valid())
        .map(|r| r.image_id.as_str())
        .collect();
    let before = rows.len();
    let kept: Vec<RawQaRow> = rows
        .into_iter()
        .filter(|r| valid.contains(r.image_id.as_str()))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Soft accuracy of `candidate` against the ground-truth answers:
/// `min(matches / 3, 1)`, comparing casefolded, whitespace-collapsed strings.
pub fn soft_target(answers: &[String], candidate: &str) -> f64 {
    let key = normalize_key(candidate);
    let matches = answers.iter().filter(|a| normalize_key(a) == key).count();
    (matches as f64 / 3.0).min(1.0)
}
