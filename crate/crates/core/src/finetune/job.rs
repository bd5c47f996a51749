use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Preprocessing,
    ExtractingFeatures,
    Training,
    Packaging,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Progress range covered by this stage of a job.
    pub fn band(self) -> (f64, f64) {
        match self {
            JobState::Queued => (0.0, 0.0),
            JobState::Preprocessing => (0.0, 0.1),
            JobState::ExtractingFeatures => (0.1, 0.2),
            JobState::Training => (0.2, 0.95),
            JobState::Packaging => (0.95, 1.0),
            JobState::Done => (1.0, 1.0),
            JobState::Failed => (0.0, 1.0),
        }
    }

    /// Forward moves along the pipeline, or to `Failed` from any
    /// non-terminal state.
    pub fn can_move_to(self, next: JobState) -> bool {
        if self.is_terminal() {
            return false;
        }
        next == JobState::Failed || next > self
    }
}

/// Snapshot of a fine-tuning job, as served to pollers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub job_id: String,
    pub state: JobState,
    pub progress: f64,
    pub epoch: usize,
    pub latest_loss: Option<f64>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_path: Option<PathBuf>,
}

/// Shared, lock-protected job record. Progress never moves backwards and
/// state changes follow [`JobState::can_move_to`].
#[derive(Debug)]
pub struct JobTracker {
    inner: Mutex<FineTuneJob>,
}

impl JobTracker {
    pub fn new(job_id: impl Into<String>) -> Self {
        Self {
            inner: Mutex::new(FineTuneJob {
                job_id: job_id.into(),
                state: JobState::Queued,
                progress: 0.0,
                epoch: 0,
                latest_loss: None,
                message: "Waiting to start.".into(),
                artifact_path: None,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, FineTuneJob> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> FineTuneJob {
        self.lock().clone()
    }

    pub fn state(&self) -> JobState {
        self.lock().state
    }

    /// Moves to `state` and raises progress to the start of its band.
    /// Returns false (and changes nothing) for an illegal transition.
    pub fn enter(&self, state: JobState, message: impl Into<String>) -> bool {
        let mut job = self.lock();
        if !job.state.can_move_to(state) {
            return false;
        }
        job.state = state;
        job.progress = job.progress.max(state.band().0);
        job.message = message.into();
        true
    }

    /// Sets progress to `fraction` of the current stage's band.
    pub fn stage_progress(&self, fraction: f64) {
        let mut job = self.lock();
        let (lo, hi) = job.state.band();
        let p = lo + (hi - lo) * fraction.clamp(0.0, 1.0);
        job.progress = job.progress.max(p);
    }

    pub fn training_step(&self, epoch: usize, loss: f64, fraction: f64, message: impl Into<String>) {
        {
            let mut job = self.lock();
            job.epoch = epoch;
            job.latest_loss = loss.is_finite().then_some(loss);
            job.message = message.into();
        }
        self.stage_progress(fraction);
    }

    pub fn finish(&self, artifact_path: PathBuf) -> bool {
        let mut job = self.lock();
        if !job.state.can_move_to(JobState::Done) {
            return false;
        }
        job.state = JobState::Done;
        job.progress = 1.0;
        job.message = "Fine-tuning finished.".into();
        job.artifact_path = Some(artifact_path);
        true
    }

    pub fn fail(&self, message: impl Into<String>) -> bool {
        let mut job = self.lock();
        if job.state.is_terminal() {
            return false;
        }
        job.state = JobState::Failed;
        job.message = message.into();
        true
    }
}
