use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::sync::Mutex;

use proptest::prelude::*;
use vqa_core::dataset::QaEntry;
use vqa_core::features::{Extractor, ExtractorSpec, FeatureStore, RegionFeatures, SpecExtractor};
use vqa_core::finetune::{
    build_answer_space, make_targets, predict_with, run_finetune, train, train_examples, AnswerSpace, FinetuneError,
    FinetuneRequest, JobState, JobTracker, StepEvent, TrainSpec, TrainingExample,
};
use vqa_core::model::{Architecture, VqaModel};
use vqa_testkit::gradcheck::{random_ids, random_regions, random_targets, tiny_config};
use vqa_testkit::rng;
use vqa_testkit::scenes::{scene_entries, scene_images};

fn entry(answers: Vec<String>) -> QaEntry {
    QaEntry { question_id: 0, image_id: "i".into(), question: "q?".into(), answers }
}

fn answer_lists() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = prop::sample::select(vec!["yes", "Yes", " no", "two", "2", "red  car", "Red car", "blue"]);
    prop::collection::vec(prop::collection::vec(word.prop_map(String::from), 10), 1..8)
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn answer_space_matches_counting(lists in answer_lists(), min_count in 1usize..12) {
        let entries: Vec<QaEntry> = lists.into_iter().map(entry).collect();
        let all: Vec<String> = entries.iter().flat_map(|e| e.answers.iter().map(|a| norm(a))).collect();
        let mut distinct: Vec<String> = all.clone();
        distinct.sort();
        distinct.dedup();
        let count = |l: &String| all.iter().filter(|a| *a == l).count();
        let mut expected: Vec<String> = distinct.iter().filter(|l| count(l) >= min_count).cloned().collect();
        // most frequent first, then alphabetical
        expected.sort_by(|a, b| count(b).cmp(&count(a)).then(a.cmp(b)));
        match build_answer_space(&entries, min_count) {
            Ok(space) => prop_assert_eq!(space.labels(), expected.as_slice()),
            Err(FinetuneError::EmptyAnswerSpace) => prop_assert!(expected.is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn targets_are_clipped_counts(lists in answer_lists()) {
        let entries: Vec<QaEntry> = lists.into_iter().map(entry).collect();
        let space = build_answer_space(&entries, 1).unwrap();
        for e in &entries {
            let t = make_targets(e, &space);
            prop_assert_eq!(t.len(), space.len());
            for (label, v) in space.labels().iter().zip(&t) {
                let n = e.answers.iter().filter(|a| norm(a) == *label).count();
                prop_assert_eq!(*v, (n as f64 / 3.0).min(1.0));
            }
        }
    }
}

#[test]
fn answers_outside_the_space_are_dropped() {
    let space = AnswerSpace::from_labels(vec!["yes".into(), "no".into()], 5);
    let e = entry(vec!["yes".into(), "maybe".into(), "YES".into(), "yes ".into(), "yes".into()]);
    assert_eq!(make_targets(&e, &space), vec![1.0, 0.0]);
    assert!(matches!(build_answer_space(&[], 1), Err(FinetuneError::EmptyDataset)));
}

struct Fixture {
    regions: Vec<RegionFeatures>,
    ids: Vec<Vec<u32>>,
    targets: Vec<Vec<f64>>,
}

fn fixture(arch: Architecture, n: usize) -> (VqaModel, Fixture) {
    let mut r = rng(40);
    let config = tiny_config(arch);
    let model = VqaModel::new(config.clone(), 4).unwrap();
    let fx = Fixture {
        regions: (0..n).map(|_| random_regions(&mut r, 3, 6)).collect(),
        ids: (0..n).map(|i| random_ids(&mut r, &config, 1 + i % 4)).collect(),
        targets: (0..n).map(|_| random_targets(&mut r, 4)).collect(),
    };
    (model, fx)
}

fn examples(fx: &Fixture) -> Vec<TrainingExample<'_>> {
    (0..fx.ids.len())
        .map(|i| TrainingExample { ids: fx.ids[i].clone(), regions: &fx.regions[i], targets: fx.targets[i].clone() })
        .collect()
}

fn spec(arch: Architecture, epochs: usize, batch: usize, dropout: f64) -> TrainSpec {
    let mut s = TrainSpec::new(tiny_config(arch));
    s.model_config.dropout = dropout;
    s.epochs = epochs;
    s.batch_size = batch;
    s.learning_rate = 3e-3;
    s.seed = 17;
    s
}

#[test]
fn training_is_bitwise_deterministic() {
    for arch in [Architecture::SingleStream, Architecture::DualStream] {
        let run = || {
            let (_, fx) = fixture(arch, 7);
            let s = spec(arch, 2, 3, 0.1);
            let mut model = VqaModel::new(s.model_config.clone(), 4).unwrap();
            let mut losses = Vec::new();
            train_examples(&mut model, &examples(&fx), &s, &mut |e| losses.push(e.loss.to_bits()), None).unwrap();
            let params: Vec<u64> = model.params().iter().flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
            (losses, params)
        };
        assert_eq!(run(), run(), "{arch:?}");
    }
}

#[test]
fn one_epoch_takes_ceil_n_over_b_steps() {
    let (mut model, fx) = fixture(Architecture::SingleStream, 10);
    let s = spec(Architecture::SingleStream, 1, 4, 0.0);
    let mut events: Vec<StepEvent> = Vec::new();
    let out = train_examples(&mut model, &examples(&fx), &s, &mut |e| events.push(*e), None).unwrap();
    assert_eq!(out.steps, 3);
    assert_eq!(events.len(), 3);
    assert_eq!(out.epoch_losses.len(), 1);
    assert!(events.windows(2).all(|w| w[0].fraction() < w[1].fraction()));
    assert_eq!(events.last().unwrap().fraction(), 1.0);
}

#[test]
fn training_reduces_loss() {
    for arch in [Architecture::SingleStream, Architecture::DualStream] {
        let (mut model, fx) = fixture(arch, 6);
        let s = spec(arch, 15, 3, 0.0);
        let ex = examples(&fx);
        let before: f64 = ex.iter().map(|e| model.loss(&e.ids, e.regions, &e.targets).unwrap()).sum();
        let out = train_examples(&mut model, &ex, &s, &mut |_| {}, None).unwrap();
        let after: f64 = ex.iter().map(|e| model.loss(&e.ids, e.regions, &e.targets).unwrap()).sum();
        assert!(after < before, "{arch:?}: {before} -> {after}");
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    }
}

#[test]
fn non_finite_loss_is_divergence() {
    let (mut model, fx) = fixture(Architecture::SingleStream, 4);
    let id = model.params().iter().next().unwrap().0;
    model.params_mut().value_mut(id).fill(f64::NAN);
    let s = spec(Architecture::SingleStream, 1, 2, 0.0);
    match train_examples(&mut model, &examples(&fx), &s, &mut |_| {}, None) {
        Err(FinetuneError::Diverged { epoch: 1, step: 1 }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn cancellation_stops_between_batches() {
    let (mut model, fx) = fixture(Architecture::SingleStream, 4);
    let s = spec(Architecture::SingleStream, 3, 2, 0.0);
    let cancel = AtomicBool::new(false);
    let mut steps = 0;
    let r = train_examples(
        &mut model,
        &examples(&fx),
        &s,
        &mut |_| {
            steps += 1;
            cancel.store(true, std::sync::atomic::Ordering::SeqCst);
        },
        Some(&cancel),
    );
    assert!(matches!(r, Err(FinetuneError::Interrupted)));
    assert_eq!(steps, 1);
}

#[test]
fn prediction_ties_prefer_lower_index() {
    let (model, fx) = fixture(Architecture::SingleStream, 1);
    let space = AnswerSpace::from_labels((0..4).map(|i| format!("a{i}")).collect(), 1);
    let mut zeroed = model.clone();
    let ids: Vec<_> = zeroed.params().iter().filter(|(_, n, _)| n.starts_with("head")).map(|(id, _, _)| id).collect();
    assert!(!ids.is_empty());
    for id in ids {
        zeroed.params_mut().value_mut(id).fill(0.0);
    }
    let p = predict_with(&zeroed, &fx.ids[0], &fx.regions[0], &space, 4).unwrap();
    assert_eq!(p.answers.iter().map(|a| a.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(p.answers.iter().all(|a| (a.probability - 0.5).abs() < 1e-12));
    let p = predict_with(&model, &fx.ids[0], &fx.regions[0], &space, 1).unwrap();
    assert_eq!(p.answers.len(), 1);
}

#[test]
fn full_job_reports_monotone_progress() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path().join("features")).unwrap();
    let images: BTreeMap<String, Vec<u8>> = scene_images(32);
    let entries = scene_entries();
    let extractor = SpecExtractor::new(ExtractorSpec::grid(4, 8)).unwrap();
    let mut s = spec(Architecture::DualStream, 2, 8, 0.0);
    s.model_config.hidden_dim = 8;
    let req = FinetuneRequest {
        entries: &entries,
        images: &images,
        store: &store,
        extractor: &extractor,
        spec: s,
        artifact_path: dir.path().join("model.vqa"),
        workers: 2,
    };
    let tracker = JobTracker::new("job");
    let seen = Mutex::new(Vec::new());
    let done = AtomicBool::new(false);
    std::thread::scope(|scope| {
        scope.spawn(|| {
            while !done.load(std::sync::atomic::Ordering::SeqCst) {
                seen.lock().unwrap().push(tracker.snapshot());
                std::thread::yield_now();
            }
        });
        run_finetune(&req, &tracker, &AtomicBool::new(false)).unwrap();
        done.store(true, std::sync::atomic::Ordering::SeqCst);
    });
    let seen = seen.into_inner().unwrap();
    assert!(seen.windows(2).all(|w| w[0].progress <= w[1].progress && w[0].state <= w[1].state));
    let last = tracker.snapshot();
    assert_eq!((last.state, last.progress), (JobState::Done, 1.0));
    assert!(last.latest_loss.is_some());
    assert!(dir.path().join("model.vqa").exists());

    // second run reuses cached features and trains the same model
    let (a, _) = train(&entries, &store, extractor.spec(), &req.spec, &mut |_| {}, None).unwrap();
    let b = vqa_core::model::load_model(&dir.path().join("model.vqa")).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn failed_job_keeps_its_message() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeatureStore::open(dir.path()).unwrap();
    let images = BTreeMap::new();
    let entries = scene_entries();
    let extractor = SpecExtractor::new(ExtractorSpec::grid(4, 8)).unwrap();
    let req = FinetuneRequest {
        entries: &entries,
        images: &images,
        store: &store,
        extractor: &extractor,
        spec: spec(Architecture::SingleStream, 1, 4, 0.0),
        artifact_path: dir.path().join("m.vqa"),
        workers: 1,
    };
    let tracker = JobTracker::new("j");
    assert!(run_finetune(&req, &tracker, &AtomicBool::new(false)).is_err());
    let s = tracker.snapshot();
    assert_eq!(s.state, JobState::Failed);
    assert!(s.message.contains("blue_left"), "{}", s.message);
}
