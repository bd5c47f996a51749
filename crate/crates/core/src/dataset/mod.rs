//! Upload ingestion and cleaning.
//!
//! A dataset arrives as a ZIP of images plus a CSV of questions. Cleaning
//! fills every question up to ten answers, removes duplicate
//! image/question pairs and questions pointing at missing or unusable
//! images, and leaves out images larger than [`MAX_IMAGE_SIDE`] pixels.

mod build;
mod images;
mod qa;
mod store;

pub use build::{build_dataset, DatasetBuild};
pub use images::{ingest_images, ImageArchive};
pub use qa::{autofill_answers, dedupe, drop_invalid_refs, parse_qa_csv, soft_target};
pub use store::{load_dataset, save_dataset, DatasetFile, DATASET_FILE, REPORT_FILE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted width or height, inclusive.
pub const MAX_IMAGE_SIDE: u32 = 1920;

/// Number of ground-truth answers every cleaned question carries.
pub const ANSWERS_PER_QUESTION: usize = 10;

/// Extensions (lowercase) treated as images inside an upload archive.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("the image archive could not be opened: {0}")]
    MalformedArchive(String),
    #[error("the questions CSV is missing the `{0}` column")]
    MissingColumn(String),
    #[error("the questions CSV has no data rows")]
    EmptyFile,
    #[error("the questions CSV could not be parsed: {0}")]
    MalformedCsv(String),
    #[error("question has no non-empty answers")]
    NoAnswers,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset file is invalid: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatus {
    Valid,
    Oversized,
    Unreadable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Filename stem, unique within a dataset.
    pub image_id: String,
    /// Entry name inside the archive.
    pub filename: String,
    /// Zero when the image could not be decoded.
    pub width: u32,
    pub height: u32,
    pub status: ImageStatus,
}

impl ImageRecord {
    pub fn is_valid(&self) -> bool {
        self.status == ImageStatus::Valid
    }
}

/// Status implied by decoded dimensions.
pub fn status_for_size(width: u32, height: u32) -> ImageStatus {
    if width > MAX_IMAGE_SIDE || height > MAX_IMAGE_SIDE {
        ImageStatus::Oversized
    } else {
        ImageStatus::Valid
    }
}

/// One CSV data row as uploaded, with blank answer cells dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQaRow {
    pub image_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// A cleaned question with exactly ten answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaEntry {
    pub question_id: u64,
    pub image_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub n_input_rows: usize,
    pub n_autofilled: usize,
    pub n_duplicates_removed: usize,
    /// Rows dropped for referencing a missing/unusable image, for having no
    /// answers or for having a question without any word.
    pub n_invalid_image_refs_removed: usize,
    pub n_oversized_images: usize,
    pub n_unreadable_images: usize,
    pub n_output_entries: usize,
}

impl CleanReport {
    pub fn is_consistent(&self) -> bool {
        self.n_input_rows
            .checked_sub(self.n_duplicates_removed)
            .and_then(|n| n.checked_sub(self.n_invalid_image_refs_removed))
            == Some(self.n_output_entries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Error,
    Warning,
    Success,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub level: Level,
    pub messages: Vec<String>,
}

impl ValidationOutcome {
    pub fn error(messages: Vec<String>) -> Self {
        Self { level: Level::Error, messages }
    }
}
