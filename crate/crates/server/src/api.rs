use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use vqa_core::dataset::{build_dataset, ingest_images, load_dataset, save_dataset, CleanReport, Level};
use vqa_core::features::{FeatureStore, SpecExtractor};
use vqa_core::finetune::{run_finetune, FineTuneJob, FinetuneRequest};

use crate::catalog::{architecture_for, catalog, ModelEntry, TrainOverrides};
use crate::error::{ApiError, ApiResult, BannerPayload, ErrorCode};
use crate::eval::{evaluate_batch, evaluate_single, RowFailure};
use crate::sample;
use crate::state::{AppState, JobHandle};

pub const UPLOAD_ARCHIVE: &str = "images.zip";

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.body_limit();
    let files = ServeDir::new(state.config.public_dir());
    let api = Router::new()
        .route("/api/dataset", post(upload_dataset))
        .route("/api/models", get(list_models))
        .route("/api/finetune", post(start_finetune))
        .route("/api/finetune/{job_id}", get(job_status))
        .route("/api/sample", get(get_sample))
        .route("/api/eval/single", post(eval_single))
        .route("/api/eval/batch", post(eval_batch))
        .route("/api/{*rest}", get(unknown_api).post(unknown_api))
        .nest_service("/files", files)
        .layer(DefaultBodyLimit::max(limit));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

async fn unknown_api() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such endpoint")
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

/// Collected multipart fields. Parts over their size cap fail the request.
struct Form {
    parts: HashMap<String, Bytes>,
    /// Fields that arrived as a named file, even an empty one.
    files: Vec<String>,
}

impl Form {
    async fn read(mut multipart: Multipart, caps: &[(&str, usize)], default_cap: usize) -> ApiResult<Form> {
        let mut parts = HashMap::new();
        let mut files = Vec::new();
        while let Some(mut field) = multipart.next_field().await.map_err(multipart_error)? {
            let name = field.name().unwrap_or_default().to_string();
            if field.file_name().is_some_and(|f| !f.is_empty()) {
                files.push(name.clone());
            }
            let cap = caps.iter().find(|(n, _)| *n == name).map_or(default_cap, |c| c.1);
            let mut buf = Vec::new();
            while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
                if buf.len() + chunk.len() > cap {
                    return Err(ApiError::new(
                        ErrorCode::PayloadTooLarge,
                        format!("part '{name}' exceeds the {cap}-byte limit"),
                    ));
                }
                buf.extend_from_slice(&chunk);
            }
            parts.insert(name, Bytes::from(buf));
        }
        Ok(Form { parts, files })
    }

    /// First present field among `names`.
    fn get(&self, names: &[&str]) -> Option<Bytes> {
        names.iter().find_map(|n| self.parts.get(*n).cloned())
    }

    /// A present field; an empty part counts only when it was a named file
    /// (browsers send an empty, unnamed part for an unset file input).
    fn require(&self, names: &[&str], what: &str) -> ApiResult<Bytes> {
        names
            .iter()
            .find_map(|n| {
                let b = self.parts.get(*n)?;
                (!b.is_empty() || self.files.iter().any(|f| f == n)).then(|| b.clone())
            })
            .ok_or_else(|| ApiError::new(ErrorCode::MissingPart, format!("the {what} is missing")))
    }

    fn text(&self, names: &[&str]) -> Option<String> {
        self.get(names).map(|b| String::from_utf8_lossy(&b).into_owned())
    }
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(ErrorCode::PayloadTooLarge, e.body_text())
    } else {
        ApiError::new(ErrorCode::InvalidRequest, e.body_text())
    }
}

const ARCHIVE_FIELDS: [&str; 3] = ["images", "zip", "archive"];
const CSV_FIELDS: [&str; 3] = ["qa", "csv", "questions"];

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetResponse {
    pub dataset_id: String,
    pub banner: BannerPayload,
    pub report: CleanReport,
}

async fn upload_dataset(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<Json<DatasetResponse>> {
    let cfg = &state.config;
    let caps: Vec<(&str, usize)> = ARCHIVE_FIELDS
        .iter()
        .map(|n| (*n, cfg.max_zip_bytes))
        .chain(CSV_FIELDS.iter().map(|n| (*n, cfg.max_csv_bytes)))
        .collect();
    let form = Form::read(multipart, &caps, cfg.max_csv_bytes).await?;
    let archive = form.require(&ARCHIVE_FIELDS, "images ZIP")?;
    let csv = form.require(&CSV_FIELDS, "questions CSV")?;

    let state2 = state.clone();
    blocking(move || {
        let build = build_dataset(&archive, &csv);
        if build.outcome.level == Level::Error {
            let mut err = ApiError::new(ErrorCode::DatasetInvalid, build.outcome.messages.join(" "));
            err.banner = Some(build.outcome);
            err.report = Some(build.report);
            return Err(err);
        }
        let dataset_id = uuid::Uuid::new_v4().to_string();
        let dir = state2.config.datasets_dir().join(&dataset_id);
        std::fs::create_dir_all(&dir).map_err(ApiError::internal)?;
        vqa_core::write_atomic(&dir.join(UPLOAD_ARCHIVE), &archive).map_err(ApiError::internal)?;
        // the dataset file goes last: its presence marks the dataset usable
        save_dataset(&dir, &build.entries, &build.report).map_err(ApiError::internal)?;
        tracing::info!(%dataset_id, entries = build.entries.len(), "dataset stored");
        Ok(Json(DatasetResponse {
            dataset_id,
            banner: build.outcome,
            report: build.report,
        }))
    })
    .await
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelEntry>> {
    Json(catalog(&state.config.train))
}

#[derive(Debug, Default, Deserialize)]
struct FinetuneBody {
    dataset_id: Option<String>,
    model_id: Option<String>,
    overrides: Option<TrainOverrides>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

async fn start_finetune(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: FinetuneBody = if body.iter().all(u8::is_ascii_whitespace) {
        FinetuneBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))?
    };
    let model_id = body.model_id.as_deref().map(str::trim).unwrap_or_default().to_string();
    let arch = architecture_for(&model_id).ok_or_else(|| {
        ApiError::new(ErrorCode::ModelNotSelected, "Please select a pre-trained model before fine-tuning.")
    })?;
    let dataset_id = body.dataset_id.unwrap_or_default();
    let dataset_dir = state
        .dataset_dir(&dataset_id)
        .ok_or_else(|| ApiError::new(ErrorCode::DatasetNotFound, format!("no dataset {dataset_id}")))?;
    let spec = body
        .overrides
        .unwrap_or_default()
        .apply(state.config.train.spec_for(arch))?;

    let (job_id, handle) = state.try_submit(&dataset_id, &model_id)?;
    tracing::info!(%job_id, %dataset_id, %model_id, "fine-tuning job accepted");
    let state2 = state.clone();
    tokio::task::spawn_blocking(move || run_job(&state2, &handle, dataset_dir, spec));
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id })).into_response())
}

fn run_job(state: &AppState, handle: &JobHandle, dataset_dir: PathBuf, spec: vqa_core::finetune::TrainSpec) {
    let tracker = &handle.tracker;
    let prepared = (|| -> Result<_, String> {
        let entries = load_dataset(&dataset_dir).map_err(|e| e.to_string())?;
        let archive = std::fs::read(dataset_dir.join(UPLOAD_ARCHIVE)).map_err(|e| e.to_string())?;
        let images = ingest_images(&archive).map_err(|e| e.to_string())?;
        let store = FeatureStore::open(dataset_dir.join("features")).map_err(|e| e.to_string())?;
        let extractor = SpecExtractor::new(state.config.extractor.clone()).map_err(|e| e.to_string())?;
        Ok((entries, images.bytes, store, extractor))
    })();
    let (entries, images, store, extractor) = match prepared {
        Ok(p) => p,
        Err(e) => {
            tracker.fail(format!("could not load the dataset: {e}"));
            return;
        }
    };
    let job_id = tracker.snapshot().job_id;
    let req = FinetuneRequest {
        entries: &entries,
        images: &images,
        store: &store,
        extractor: &extractor,
        spec,
        artifact_path: state.artifact_path(&job_id),
        workers: state.config.workers,
    };
    match run_finetune(&req, tracker, &handle.cancel) {
        Ok(_) => tracing::info!(%job_id, "fine-tuning finished"),
        Err(e) => tracing::warn!(%job_id, "fine-tuning failed: {e}"),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobStatus {
    #[serde(flatten)]
    pub job: FineTuneJob,
    pub dataset_id: String,
    pub model_id: String,
    /// Id to pass to the evaluation endpoints once the job is done.
    pub artifact_id: Option<String>,
}

async fn job_status(State(state): State<Arc<AppState>>, Path(job_id): Path<String>) -> ApiResult<Response> {
    let handle = state
        .job(&job_id)
        .ok_or_else(|| ApiError::new(ErrorCode::JobNotFound, format!("no fine-tuning job {job_id}")))?;
    let mut job = handle.tracker.snapshot();
    let artifact_id = job.artifact_path.is_some().then(|| job.job_id.clone());
    job.artifact_path = None;
    let body = JobStatus {
        job,
        dataset_id: handle.dataset_id.clone(),
        model_id: handle.model_id.clone(),
        artifact_id,
    };
    Ok(([(header::CACHE_CONTROL, "max-age=1")], Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleResponse {
    pub image_url: String,
    pub questions: Vec<String>,
    pub dataset_zip_url: String,
    pub dataset_csv_url: String,
}

async fn get_sample(State(state): State<Arc<AppState>>) -> ApiResult<Json<SampleResponse>> {
    let q = sample::load(&state.config.public_dir())
        .ok_or_else(|| ApiError::new(ErrorCode::SampleUnavailable, "the sample assets are not installed"))?;
    let url = |name: &str| format!("/files/{}/{name}", sample::SAMPLE_DIR);
    Ok(Json(SampleResponse {
        image_url: url(sample::SAMPLE_IMAGE),
        questions: q.questions,
        dataset_zip_url: url(sample::SAMPLE_DATASET_ZIP),
        dataset_csv_url: url(sample::SAMPLE_DATASET_CSV),
    }))
}

const MODEL_FIELDS: [&str; 2] = ["job_id", "artifact_id"];

#[derive(Debug, Serialize, Deserialize)]
pub struct SingleResponse {
    pub answer: String,
    pub probability: f64,
    pub annotated_image_url: String,
    pub warnings: Vec<String>,
}

async fn eval_single(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<Json<SingleResponse>> {
    let form = Form::read(multipart, &[("image", state.config.max_image_bytes)], 64 * 1024).await?;
    let artifact = state.artifact(form.text(&MODEL_FIELDS).as_deref())?;
    let question = form.text(&["question"]).unwrap_or_default();
    let use_sample = form
        .text(&["sample"])
        .is_some_and(|s| matches!(s.trim(), "1" | "true" | "yes"));
    let image = match form.get(&["image"]).filter(|b| !b.is_empty()) {
        Some(b) => b.to_vec(),
        None if use_sample => {
            let path = sample::sample_dir(&state.config.public_dir()).join(sample::SAMPLE_IMAGE);
            std::fs::read(path)
                .map_err(|_| ApiError::new(ErrorCode::SampleUnavailable, "the sample image is not installed"))?
        }
        None => return Err(ApiError::new(ErrorCode::MissingPart, "the image is missing")),
    };

    let state2 = state.clone();
    blocking(move || {
        let extractor = SpecExtractor::new(artifact.extractor.clone()).map_err(ApiError::internal)?;
        let out = evaluate_single(&artifact, &extractor, &image, &question, &state2.style)?;
        let name = format!("annotated/{}.png", uuid::Uuid::new_v4());
        let url = state2.publish(std::path::Path::new(&name), &out.png)?;
        Ok(Json(SingleResponse {
            answer: out.answer,
            probability: out.probability,
            annotated_image_url: url,
            warnings: out.warnings,
        }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchResponse {
    pub results_csv_url: String,
    pub annotated_zip_url: String,
    pub n_processed: usize,
    pub n_failed: usize,
    pub failures: Vec<RowFailure>,
}

async fn eval_batch(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<Json<BatchResponse>> {
    let cfg = &state.config;
    let caps: Vec<(&str, usize)> = ARCHIVE_FIELDS
        .iter()
        .map(|n| (*n, cfg.max_zip_bytes))
        .chain(CSV_FIELDS.iter().map(|n| (*n, cfg.max_csv_bytes)))
        .collect();
    let form = Form::read(multipart, &caps, 64 * 1024).await?;
    let archive = form.require(&ARCHIVE_FIELDS, "images ZIP")?;
    let csv = form.require(&CSV_FIELDS, "questions CSV")?;
    let artifact = state.artifact(form.text(&MODEL_FIELDS).as_deref())?;

    let state2 = state.clone();
    blocking(move || {
        let extractor = SpecExtractor::new(artifact.extractor.clone()).map_err(ApiError::internal)?;
        let out = evaluate_batch(&artifact, &extractor, &archive, &csv, &state2.style)?;
        let dir = PathBuf::from("results").join(uuid::Uuid::new_v4().to_string());
        let results_csv_url = state2.publish(&dir.join("results.csv"), &out.results_csv)?;
        let annotated_zip_url = state2.publish(&dir.join("annotated.zip"), &out.annotated_zip)?;
        Ok(Json(BatchResponse {
            results_csv_url,
            annotated_zip_url,
            n_processed: out.n_processed,
            n_failed: out.n_failed,
            failures: out.failures,
        }))
    })
    .await
}
