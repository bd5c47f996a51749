//! Prediction plus annotation for single questions and CSV batches.

use std::collections::BTreeMap;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use vqa_core::attention::{
    aggregate_attention, annotate, annotate_batch, select_top, AnnotationItem, AnnotationStyle,
};
use vqa_core::dataset::{ingest_images, parse_qa_csv, ImageStatus, MAX_IMAGE_SIDE};
use vqa_core::features::{Extractor, FeatureError, RegionFeatures};
use vqa_core::finetune::{predict, FinetuneError, Prediction};
use vqa_core::model::{ModelArtifact, ModelError};

use crate::error::{ApiError, ApiResult, ErrorCode};

#[derive(Debug, Clone)]
pub struct SingleEval {
    pub answer: String,
    pub probability: f64,
    pub png: Vec<u8>,
    pub warnings: Vec<String>,
}

pub fn decode_image(bytes: &[u8]) -> ApiResult<DynamicImage> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| ApiError::new(ErrorCode::ImageInvalid, format!("the image could not be read: {e}")))?;
    if img.width() > MAX_IMAGE_SIDE || img.height() > MAX_IMAGE_SIDE {
        return Err(ApiError::new(
            ErrorCode::ImageInvalid,
            format!(
                "the image is {}x{}; width and height must be at most {MAX_IMAGE_SIDE} pixels",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(img)
}

fn feature_error(e: FeatureError) -> ApiError {
    match e {
        FeatureError::UnreadableImage(_) => ApiError::new(ErrorCode::ImageInvalid, e.to_string()),
        FeatureError::ExtractorUnavailable(_) | FeatureError::SchemaViolation(_) => {
            ApiError::new(ErrorCode::ExtractorUnavailable, e.to_string())
        }
        other => ApiError::internal(other),
    }
}

fn predict_error(e: FinetuneError) -> ApiError {
    match e {
        FinetuneError::Model(ModelError::EmptyQuestion) => {
            ApiError::new(ErrorCode::EmptyQuestion, "the question has no words")
        }
        other => ApiError::internal(other),
    }
}

fn ensure_question(question: &str) -> ApiResult<()> {
    if question.trim().is_empty() {
        return Err(ApiError::new(ErrorCode::EmptyQuestion, "a question is required"));
    }
    Ok(())
}

fn run_prediction(
    artifact: &ModelArtifact,
    question: &str,
    regions: &RegionFeatures,
) -> ApiResult<Prediction> {
    predict(artifact, question, regions, 1).map_err(predict_error)
}

/// Extract, predict the best answer and draw the top regions.
pub fn evaluate_single(
    artifact: &ModelArtifact,
    extractor: &dyn Extractor,
    image_bytes: &[u8],
    question: &str,
    style: &AnnotationStyle,
) -> ApiResult<SingleEval> {
    ensure_question(question)?;
    let image = decode_image(image_bytes)?;
    let regions = extractor.extract("upload", image_bytes).map_err(feature_error)?;
    let prediction = run_prediction(artifact, question, &regions)?;
    let scores = aggregate_attention(&prediction.trace, &prediction.token_map).map_err(ApiError::internal)?;
    let top = select_top(&scores, style.top_k);
    let annotated = annotate(&image, &regions.boxes, &top, style).map_err(ApiError::internal)?;
    let best = prediction.best();
    Ok(SingleEval {
        answer: best.answer.clone(),
        probability: best.probability,
        png: annotated.png,
        warnings: annotated.warnings.iter().map(ToString::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub question_id: u64,
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BatchEval {
    pub results_csv: Vec<u8>,
    pub annotated_zip: Vec<u8>,
    pub zip_entries: Vec<String>,
    pub n_processed: usize,
    pub n_failed: usize,
    pub failures: Vec<RowFailure>,
}

#[derive(Debug, Serialize)]
struct ResultRow<'a> {
    question_id: u64,
    image_id: &'a str,
    question: &'a str,
    predicted_answer: &'a str,
    probability: f64,
}

struct Answered {
    question_id: u64,
    image_id: String,
    question: String,
    prediction: Prediction,
}

/// Runs the single-question pipeline for every CSV row. Question ids are
/// the 0-based data row numbers. Rows with an unusable image or question
/// are skipped and counted as failed.
pub fn evaluate_batch(
    artifact: &ModelArtifact,
    extractor: &dyn Extractor,
    archive: &[u8],
    csv: &[u8],
    style: &AnnotationStyle,
) -> ApiResult<BatchEval> {
    let no_entries = |m: String| ApiError::new(ErrorCode::NoValidEntries, m);
    let images = ingest_images(archive).map_err(|e| no_entries(e.to_string()))?;
    let rows = parse_qa_csv(csv).map_err(|e| no_entries(e.to_string()))?;

    let mut regions: BTreeMap<String, Result<RegionFeatures, String>> = BTreeMap::new();
    let mut answered = Vec::new();
    let mut failures = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let question_id = i as u64;
        let mut fail = |reason: String| {
            failures.push(RowFailure { question_id, image_id: row.image_id.clone(), reason })
        };
        let status = images.record(&row.image_id).map(|r| r.status);
        match status {
            None => {
                fail("no such image in the archive".into());
                continue;
            }
            Some(ImageStatus::Oversized) => {
                fail(format!("image exceeds {MAX_IMAGE_SIDE} pixels"));
                continue;
            }
            Some(ImageStatus::Unreadable) => {
                fail("image could not be read".into());
                continue;
            }
            Some(ImageStatus::Valid) => {}
        }
        if row.question.trim().is_empty() {
            fail("empty question".into());
            continue;
        }
        let feats = regions.entry(row.image_id.clone()).or_insert_with(|| {
            extractor
                .extract(&row.image_id, &images.bytes[&row.image_id])
                .map_err(|e| e.to_string())
        });
        let feats = match feats {
            Ok(f) => f,
            Err(e) => {
                fail(e.clone());
                continue;
            }
        };
        match predict(artifact, &row.question, feats, 1) {
            Ok(prediction) => answered.push(Answered {
                question_id,
                image_id: row.image_id.clone(),
                question: row.question.clone(),
                prediction,
            }),
            Err(e) => fail(e.to_string()),
        }
    }
    if answered.is_empty() {
        return Err(no_entries(
            "there is no valid image or question entry in the upload".into(),
        ));
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    for a in &answered {
        let best = a.prediction.best();
        writer
            .serialize(ResultRow {
                question_id: a.question_id,
                image_id: &a.image_id,
                question: &a.question,
                predicted_answer: &best.answer,
                probability: best.probability,
            })
            .map_err(ApiError::internal)?;
    }
    let results_csv = writer.into_inner().map_err(ApiError::internal)?;

    let items: Vec<AnnotationItem<'_>> = answered
        .iter()
        .map(|a| {
            let feats = regions[&a.image_id].as_ref().expect("answered rows have features");
            AnnotationItem {
                question_id: a.question_id,
                question: &a.question,
                image: &images.bytes[&a.image_id],
                boxes: &feats.boxes,
                trace: &a.prediction.trace,
                token_map: &a.prediction.token_map,
            }
        })
        .collect();
    let archive = annotate_batch(&items, style).map_err(ApiError::internal)?;

    Ok(BatchEval {
        results_csv,
        annotated_zip: archive.zip,
        zip_entries: archive.entries,
        n_processed: answered.len(),
        n_failed: failures.len(),
        failures,
    })
}
