use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use super::{
    build_answer_space, make_targets, train_examples, FinetuneError, JobState, JobTracker,
    StepEvent, TrainOutcome, TrainSpec, TrainingExample,
};
use crate::dataset::QaEntry;
use crate::features::{cache_features, Extractor, ExtractorSpec, FeatureStore, RegionFeatures};
use crate::model::{save_model, ModelArtifact, PretrainedInfo, Vocab, VqaModel};

/// Loads cached regions for every image referenced by `entries`.
pub fn load_regions(
    entries: &[QaEntry],
    store: &FeatureStore,
) -> Result<BTreeMap<String, RegionFeatures>, FinetuneError> {
    let mut out = BTreeMap::new();
    for e in entries {
        if !out.contains_key(&e.image_id) {
            let r = store
                .load(&e.image_id)
                .map_err(|_| FinetuneError::MissingFeatures(e.image_id.clone()))?;
            out.insert(e.image_id.clone(), r);
        }
    }
    Ok(out)
}

/// Fits a new model to `entries` using features already in `store`.
pub fn train(
    entries: &[QaEntry],
    store: &FeatureStore,
    extractor: &ExtractorSpec,
    spec: &TrainSpec,
    on_step: &mut dyn FnMut(&StepEvent),
    cancel: Option<&AtomicBool>,
) -> Result<(ModelArtifact, TrainOutcome), FinetuneError> {
    spec.validate()?;
    let answers = build_answer_space(entries, spec.min_count)?;
    let vocab = Vocab::build(entries.iter().map(|e| e.question.as_str()));
    let mut config = spec.model_config.clone();
    config.vocab_size = vocab.len();
    config.feature_dim = extractor.feature_dim;
    config.max_regions = extractor.max_regions;
    let regions = load_regions(entries, store)?;
    let examples = entries
        .iter()
        .map(|e| {
            Ok(TrainingExample {
                ids: vocab.tokenize(&e.question, config.max_question_tokens)?,
                regions: &regions[&e.image_id],
                targets: make_targets(e, &answers),
            })
        })
        .collect::<Result<Vec<_>, FinetuneError>>()?;
    let mut model = VqaModel::new(config, answers.len())?;
    let outcome = train_examples(&mut model, &examples, spec, on_step, cancel)?;
    let artifact = ModelArtifact {
        model,
        vocab,
        answers,
        extractor: extractor.clone(),
        pretrained: PretrainedInfo::default(),
    };
    Ok((artifact, outcome))
}

/// Inputs of a complete fine-tuning job.
pub struct FinetuneRequest<'a> {
    pub entries: &'a [QaEntry],
    /// Raw bytes of the dataset's valid images.
    pub images: &'a BTreeMap<String, Vec<u8>>,
    pub store: &'a FeatureStore,
    pub extractor: &'a dyn Extractor,
    pub spec: TrainSpec,
    pub artifact_path: PathBuf,
    pub workers: usize,
}

fn run_stages(
    req: &FinetuneRequest<'_>,
    tracker: &JobTracker,
    cancel: &AtomicBool,
) -> Result<ModelArtifact, FinetuneError> {
    tracker.enter(JobState::Preprocessing, "Preparing the answer space and vocabulary.");
    req.spec.validate()?;
    if req.entries.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    build_answer_space(req.entries, req.spec.min_count)?;
    tracker.stage_progress(1.0);

    tracker.enter(JobState::ExtractingFeatures, "Extracting region features.");
    let mut needed: Vec<&str> = req.entries.iter().map(|e| e.image_id.as_str()).collect();
    needed.sort_unstable();
    needed.dedup();
    let images = needed
        .iter()
        .map(|&id| {
            req.images
                .get(id)
                .map(|b| (id, b.as_slice()))
                .ok_or_else(|| FinetuneError::MissingFeatures(id.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let progress = |done: usize, total: usize| tracker.stage_progress(done as f64 / total.max(1) as f64);
    let report = cache_features(req.store, images, req.extractor, req.workers, &progress)?;
    if let Some((id, err)) = report.failed.into_iter().next() {
        return Err(FinetuneError::Extraction { image_id: id, source: err });
    }

    tracker.enter(JobState::Training, "Training.");
    let mut on_step = |ev: &StepEvent| {
        tracker.training_step(
            ev.epoch,
            ev.loss,
            ev.fraction(),
            format!("Epoch {}/{}, step {}/{}", ev.epoch, req.spec.epochs, ev.step, ev.total_steps),
        )
    };
    let (artifact, _) = train(
        req.entries,
        req.store,
        req.extractor.spec(),
        &req.spec,
        &mut on_step,
        Some(cancel),
    )?;

    tracker.enter(JobState::Packaging, "Saving the fine-tuned model.");
    save_model(&artifact, &req.artifact_path)?;
    tracker.stage_progress(1.0);
    tracker.finish(req.artifact_path.clone());
    Ok(artifact)
}

/// Runs preprocessing, feature extraction, training and packaging,
/// reporting through `tracker`. On error the job is marked failed.
pub fn run_finetune(
    req: &FinetuneRequest<'_>,
    tracker: &JobTracker,
    cancel: &AtomicBool,
) -> Result<ModelArtifact, FinetuneError> {
    let result = run_stages(req, tracker, cancel);
    if let Err(e) = &result {
        tracker.fail(e.to_string());
    }
    result
}
