use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use vqa_core::attention::AnnotationStyle;
use vqa_core::model::{load_model, ModelArtifact};
use vqa_core::finetune::{FineTuneJob, JobState, JobTracker};

use crate::config::ServerConfig;
use crate::error::{ApiError, ApiResult, ErrorCode};

pub const ARTIFACT_EXTENSION: &str = "vqa";

/// A submitted fine-tuning job.
pub struct JobHandle {
    pub tracker: JobTracker,
    pub cancel: AtomicBool,
    pub dataset_id: String,
    pub model_id: String,
}

#[derive(Default)]
struct JobTable {
    jobs: HashMap<String, Arc<JobHandle>>,
    /// Submission order, oldest first.
    order: Vec<String>,
}

pub struct AppState {
    pub config: ServerConfig,
    pub style: AnnotationStyle,
    jobs: Mutex<JobTable>,
    artifacts: Mutex<HashMap<String, Arc<ModelArtifact>>>,
}

/// Ids are generated by the server; anything else is rejected before it
/// can reach the file system.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        AppState {
            config,
            style: AnnotationStyle::default(),
            jobs: Mutex::new(JobTable::default()),
            artifacts: Mutex::new(HashMap::new()),
        }
    }

    pub fn dataset_dir(&self, dataset_id: &str) -> Option<PathBuf> {
        if !is_valid_id(dataset_id) {
            return None;
        }
        let dir = self.config.datasets_dir().join(dataset_id);
        dir.join(vqa_core::dataset::DATASET_FILE).is_file().then_some(dir)
    }

    pub fn artifact_path(&self, artifact_id: &str) -> PathBuf {
        self.config
            .artifacts_dir()
            .join(format!("{artifact_id}.{ARTIFACT_EXTENSION}"))
    }

    /// Registers a new queued job unless another one is still running.
    /// Check and insert happen under one lock.
    pub fn try_submit(&self, dataset_id: &str, model_id: &str) -> ApiResult<(String, Arc<JobHandle>)> {
        let mut table = self.jobs.lock().expect("job table lock");
        if let Some(running) = table
            .order
            .iter()
            .find(|id| !table.jobs[*id].tracker.state().is_terminal())
        {
            return Err(ApiError::new(
                ErrorCode::JobAlreadyRunning,
                format!("fine-tuning job {running} is still running"),
            ));
        }
        let job_id = uuid::Uuid::new_v4().to_string();
        let handle = Arc::new(JobHandle {
            tracker: JobTracker::new(job_id.clone()),
            cancel: AtomicBool::new(false),
            dataset_id: dataset_id.to_string(),
            model_id: model_id.to_string(),
        });
        table.jobs.insert(job_id.clone(), handle.clone());
        table.order.push(job_id.clone());
        Ok((job_id, handle))
    }

    pub fn job(&self, job_id: &str) -> Option<Arc<JobHandle>> {
        self.jobs.lock().expect("job table lock").jobs.get(job_id).cloned()
    }

    pub fn snapshot(&self, job_id: &str) -> ApiResult<FineTuneJob> {
        self.job(job_id)
            .map(|h| h.tracker.snapshot())
            .ok_or_else(|| ApiError::new(ErrorCode::JobNotFound, format!("no fine-tuning job {job_id}")))
    }

    /// Most recently submitted job that finished successfully.
    pub fn latest_done_job(&self) -> Option<String> {
        let table = self.jobs.lock().expect("job table lock");
        table
            .order
            .iter()
            .rev()
            .find(|id| table.jobs[*id].tracker.state() == JobState::Done)
            .cloned()
    }

    /// Resolves a job or artifact id (or, with neither, the newest finished
    /// job) to a loaded model.
    pub fn artifact(&self, id: Option<&str>) -> ApiResult<Arc<ModelArtifact>> {
        let not_ready = |m: String| ApiError::new(ErrorCode::ModelNotReady, m);
        let id = match id.filter(|s| !s.trim().is_empty()) {
            Some(id) => id.trim().to_string(),
            None => self
                .latest_done_job()
                .ok_or_else(|| not_ready("no fine-tuned model is available yet".into()))?,
        };
        if !is_valid_id(&id) {
            return Err(not_ready(format!("unknown model {id}")));
        }
        if let Some(a) = self.artifacts.lock().expect("artifact cache lock").get(&id) {
            return Ok(a.clone());
        }
        if let Some(job) = self.job(&id) {
            if job.tracker.state() != JobState::Done {
                return Err(not_ready(format!("fine-tuning job {id} has not finished")));
            }
        }
        let path = self.artifact_path(&id);
        if !path.is_file() {
            return Err(not_ready(format!("unknown model {id}")));
        }
        let artifact = Arc::new(load_model(&path).map_err(ApiError::internal)?);
        self.artifacts
            .lock()
            .expect("artifact cache lock")
            .insert(id, artifact.clone());
        Ok(artifact)
    }

    /// Saves bytes under the public directory and returns their URL.
    pub fn publish(&self, relative: &Path, bytes: &[u8]) -> ApiResult<String> {
        let path = self.config.public_dir().join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(ApiError::internal)?;
        }
        vqa_core::write_atomic(&path, bytes).map_err(ApiError::internal)?;
        let parts: Vec<_> = relative
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        Ok(format!("/files/{}", parts.join("/")))
    }

    /// Flags every running job to stop at its next batch.
    pub fn cancel_all(&self) {
        let table = self.jobs.lock().expect("job table lock");
        for h in table.jobs.values() {
            h.cancel.store(true, std::sync::atomic::Ordering::Relaxed);
        }
    }
}
