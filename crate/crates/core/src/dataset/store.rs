use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CleanReport, DatasetError, QaEntry};
use crate::fsutil::write_atomic;

pub const DATASET_FILE: &str = "dataset.json";
pub const REPORT_FILE: &str = "clean_report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: u64,
    pub image_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub question_id: u64,
    pub image_id: String,
    pub answers: Vec<String>,
}

/// On-disk layout of a cleaned dataset: questions and their answer
/// annotations in two parallel lists joined by `question_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub questions: Vec<QuestionRecord>,
    pub annotations: Vec<AnnotationRecord>,
}

impl DatasetFile {
    pub fn from_entries(entries: &[QaEntry]) -> Self {
        Self {
            questions: entries
                .iter()
                .map(|e| QuestionRecord {
                    question_id: e.question_id,
                    image_id: e.image_id.clone(),
                    question: e.question.clone(),
                })
                .collect(),
            annotations: entries
                .iter()
                .map(|e| AnnotationRecord {
                    question_id: e.question_id,
                    image_id: e.image_id.clone(),
                    answers: e.answers.clone(),
                })
                .collect(),
        }
    }

    pub fn into_entries(self) -> Result<Vec<QaEntry>, DatasetError> {
        let mut answers: BTreeMap<u64, Vec<String>> = self
            .annotations
            .into_iter()
            .map(|a| (a.question_id, a.answers))
            .collect();
        self.questions
            .into_iter()
            .map(|q| {
                let answers = answers.remove(&q.question_id).ok_or_else(|| {
                    DatasetError::MalformedCsv(format!(
                        "question {} has no annotation",
                        q.question_id
                    ))
                })?;
                Ok(QaEntry {
                    question_id: q.question_id,
                    image_id: q.image_id,
                    question: q.question,
                    answers,
                })
            })
            .collect()
    }
}

/// Writes `dataset.json` and `clean_report.json` into `dir`.
pub fn save_dataset(dir: &Path, entries: &[QaEntry], report: &CleanReport) -> Result<(), DatasetError> {
    let data = serde_json::to_vec_pretty(&DatasetFile::from_entries(entries))?;
    write_atomic(&dir.join(DATASET_FILE), &data)?;
    let report = serde_json::to_vec_pretty(report)?;
    write_atomic(&dir.join(REPORT_FILE), &report)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<QaEntry>, DatasetError> {
    let file: DatasetFile = serde_json::from_slice(&fs::read(dir.join(DATASET_FILE))?)?;
    file.into_entries()
}
