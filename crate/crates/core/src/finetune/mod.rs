//! Fine-tuning: answer space, soft targets, the training loop, the job
//! record polled by clients, and prediction.

mod answers;
mod job;
mod pipeline;
mod predict;
mod trainer;

pub use answers::{build_answer_space, make_targets, AnswerSpace};
pub use job::{FineTuneJob, JobState, JobTracker};
pub use pipeline::{load_regions, run_finetune, train, FinetuneRequest};
pub use predict::{predict, predict_with, rank_answers, soft_accuracy, Prediction, RankedAnswer};
pub use trainer::{train_examples, Adam, StepEvent, TrainOutcome, TrainSpec, TrainingExample};

use thiserror::Error;

use crate::features::FeatureError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error("no answer reaches the minimum count")]
    EmptyAnswerSpace,
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
    #[error("no cached features for image `{0}`")]
    MissingFeatures(String),
    #[error("feature extraction failed for `{image_id}`: {source}")]
    Extraction {
        image_id: String,
        #[source]
        source: FeatureError,
    },
    #[error("training diverged (non-finite loss) in epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("training was cancelled")]
    Interrupted,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}
