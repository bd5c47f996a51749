use serde::Serialize;

use super::{AnswerSpace, FinetuneError};
use crate::dataset::{soft_target, QaEntry};
use crate::features::RegionFeatures;
use crate::model::{sigmoid, AttentionTrace, ModelArtifact, TokenMap, VqaModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedAnswer {
    pub answer: String,
    pub index: usize,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Highest probability first; equal probabilities keep answer-space order.
    pub answers: Vec<RankedAnswer>,
    pub trace: AttentionTrace,
    pub token_map: TokenMap,
}

impl Prediction {
    pub fn best(&self) -> &RankedAnswer {
        &self.answers[0]
    }
}

/// Ranks labels by `sigmoid(logit)` and keeps the first `k`.
pub fn rank_answers(logits: &[f64], space: &AnswerSpace, k: usize) -> Vec<RankedAnswer> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // stable: ties stay in index order
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    order
        .into_iter()
        .take(k.max(1))
        .map(|i| RankedAnswer {
            answer: space.label(i).to_string(),
            index: i,
            probability: sigmoid(logits[i]),
        })
        .collect()
}

pub fn predict_with(
    model: &VqaModel,
    ids: &[u32],
    regions: &RegionFeatures,
    space: &AnswerSpace,
    k: usize,
) -> Result<Prediction, FinetuneError> {
    let out = model.forward(ids, regions)?;
    Ok(Prediction {
        answers: rank_answers(&out.logits, space, k),
        trace: out.trace,
        token_map: out.token_map,
    })
}

/// Top-`k` answers for a free-text question, with the attention trace.
pub fn predict(
    artifact: &ModelArtifact,
    question: &str,
    regions: &RegionFeatures,
    k: usize,
) -> Result<Prediction, FinetuneError> {
    let ids = artifact
        .vocab
        .tokenize(question, artifact.model.config().max_question_tokens)?;
    predict_with(&artifact.model, &ids, regions, &artifact.answers, k)
}

/// Mean soft accuracy of the top answer over `entries`; `regions_of`
/// supplies features per image id.
pub fn soft_accuracy<'a>(
    artifact: &ModelArtifact,
    entries: &[QaEntry],
    regions_of: impl Fn(&str) -> Option<&'a RegionFeatures>,
) -> Result<f64, FinetuneError> {
    if entries.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    let mut total = 0.0;
    for e in entries {
        let regions = regions_of(&e.image_id)
            .ok_or_else(|| FinetuneError::MissingFeatures(e.image_id.clone()))?;
        let p = predict(artifact, &e.question, regions, 1)?;
        total += soft_target(&e.answers, &p.best().answer);
    }
    Ok(total / entries.len() as f64)
}
