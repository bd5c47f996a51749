//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p vqa-server --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use reqwest::StatusCode;
use serde_json::json;
use vqa_core::attention::{aggregate_attention, annotate_rgb, attention_mass, rank_scores, select_top, AnnotationStyle};
use vqa_core::dataset::build_dataset;
use vqa_core::features::{cache_features, ExtractorSpec, FeatureStore, SpecExtractor};
use vqa_core::finetune::{load_regions, soft_accuracy, train, TrainSpec};
use vqa_core::fixtures::{png_bytes, zip_bytes};
use vqa_core::model::{Architecture, Layers, ModelArtifact, ModelConfig, PAD};
use vqa_testkit::attention::{full_sort_prefix, naive_mass, naive_scores, random_dual, random_scores, random_single};
use vqa_testkit::cleaning::{reference_clean, Case};
use vqa_testkit::gradcheck::{check_gradients, random_ids, random_regions, random_targets, tiny_config};
use vqa_testkit::rng;
use vqa_testkit::scenes::{blank_png, csv_of, png, scene, scene_entries, scene_images, scene_upload, zip_of, COLORS, COLOR_QUESTION};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn cleaning_oracle() -> Outcome {
    let start = Instant::now();
    for seed in 0..200 {
        let case = Case::random(&mut rng(1000 + seed));
        let want = reference_clean(&case);
        let got = build_dataset(&case.zip_bytes(), &case.csv_bytes());
        let a: Vec<_> = got.entries.iter().map(|e| (&e.image_id, &e.question, &e.answers)).collect();
        let b: Vec<_> = want.entries.iter().map(|e| (&e.image_id, &e.question, &e.answers)).collect();
        ensure!(a == b, "seed {seed}: entries differ");
        ensure!(got.report == want.report, "seed {seed}: report {:?} vs {:?}", got.report, want.report);
        ensure!(got.outcome.level == want.level, "seed {seed}: level differs");
        let r = &got.report;
        ensure!(
            r.n_input_rows == r.n_duplicates_removed + r.n_invalid_image_refs_removed + r.n_output_entries,
            "seed {seed}: report identity fails: {r:?}"
        );
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(30), "took {t:?}");
    Ok(format!("200 fixtures in {:.1}s", t.as_secs_f64()))
}

fn banner_table(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let s = common::start().await;
        let csv = b"image_id,question,answer1\na,What is it?,cat\nb,What is it?,dog\n".to_vec();
        let ok_zip = || zip_bytes(&[("a.png", png_bytes(8, 8)), ("b.png", png_bytes(8, 8))]);
        let mut rows = Vec::new();

        let cases: Vec<(&str, Vec<u8>, Vec<u8>, StatusCode, &str, &str)> = vec![
            ("no valid images", zip_bytes(&[("a.png", blank_png(1921, 2))]), csv.clone(), StatusCode::UNPROCESSABLE_ENTITY, "error", "DATASET_INVALID"),
            ("oversized subset", zip_bytes(&[("a.png", png_bytes(8, 8)), ("b.png", blank_png(2, 1921))]), csv.clone(), StatusCode::OK, "warning", ""),
            ("all valid", ok_zip(), csv.clone(), StatusCode::OK, "success", ""),
            ("malformed zip", b"PK but not really".to_vec(), csv.clone(), StatusCode::UNPROCESSABLE_ENTITY, "error", "DATASET_INVALID"),
            ("missing question column", ok_zip(), b"image_id,answer1\na,cat\n".to_vec(), StatusCode::UNPROCESSABLE_ENTITY, "error", "DATASET_INVALID"),
            ("empty csv", ok_zip(), Vec::new(), StatusCode::UNPROCESSABLE_ENTITY, "error", "DATASET_INVALID"),
        ];
        let mut dataset_id = String::new();
        for (name, zip, csv, status, level, code) in cases {
            let (st, v) = s.upload(zip, csv).await;
            ensure!(st == status, "{name}: status {st}, body {v}");
            ensure!(common::level(&v) == level, "{name}: level {}", common::level(&v));
            ensure!(common::code(&v) == code, "{name}: code {}", common::code(&v));
            if name == "all valid" {
                dataset_id = v["dataset_id"].as_str().unwrap_or_default().to_string();
            }
            rows.push(name);
        }

        for (name, model) in [("missing model", json!(null)), ("unknown model", json!("no-such-model"))] {
            let (st, v) = s.post_json("/api/finetune", json!({"dataset_id": dataset_id, "model_id": model})).await;
            ensure!(
                st == StatusCode::BAD_REQUEST && common::code(&v) == "MODEL_NOT_SELECTED",
                "{name}: {st} {v}"
            );
            rows.push(name);
        }

        let (st, v) = s.finetune(&dataset_id, "visualbert").await;
        ensure!(st == StatusCode::ACCEPTED, "training for the batch case: {st} {v}");
        let job = v["job_id"].as_str().unwrap().to_string();
        let last = s.wait(&job, Duration::from_secs(120)).await.pop().unwrap();
        ensure!(last["state"] == "done", "job ended {last}");
        let bad_csv = b"image_id,question,answer1\nghost,What is it?,x\n".to_vec();
        let (st, v) = s.eval_batch(&job, ok_zip(), bad_csv).await;
        ensure!(
            st == StatusCode::UNPROCESSABLE_ENTITY && common::code(&v) == "NO_VALID_ENTRIES",
            "no valid batch entries: {st} {v}"
        );
        rows.push("no valid batch entries");
        Ok(format!("{} scenarios", rows.len()))
    })
}

fn aggregation_oracle() -> Outcome {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for i in 0..100 {
        let (trace, tm) = if i % 2 == 0 { random_single(&mut r) } else { random_dual(&mut r) };
        let got = aggregate_attention(&trace, &tm).map_err(|e| e.to_string())?;
        let want = naive_scores(&trace, &tm);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g.score - w).abs());
        }
        let (mass, rows) = attention_mass(&trace, &tm);
        let (_, naive_rows) = naive_mass(&trace, &tm);
        ensure!(rows == naive_rows, "trace {i}: {rows} included rows, expected {naive_rows}");
        worst_mass = worst_mass.max((mass - naive_rows).abs());
    }
    ensure!(worst < 1e-6, "max score error {worst:e}");
    ensure!(worst_mass < 1e-4, "max mass error {worst_mass:e}");
    Ok(format!("100 traces, max error {worst:.1e}, mass error {worst_mass:.1e}"))
}

fn top5_contract() -> Outcome {
    let mut r = rng(78);
    for i in 0..1000 {
        let scores = random_scores(&mut r);
        let top = select_top(&rank_scores(&scores), 5);
        let got: Vec<usize> = top.iter().map(|s| s.region_index).collect();
        ensure!(got == full_sort_prefix(&scores, 5.min(scores.len())), "vector {i}: {got:?}");
    }
    let img = RgbImage::from_pixel(200, 40, Rgb([255, 255, 255]));
    let boxes: Vec<[f32; 4]> = (0..10).map(|i| [i as f32 / 10.0 + 0.01, 0.1, i as f32 / 10.0 + 0.09, 0.9]).collect();
    let ranked = rank_scores(&(0..10).map(|i| 10.0 - i as f64).collect::<Vec<_>>());
    let style = AnnotationStyle { label: false, ..Default::default() };
    let (out, _) = annotate_rgb(&img, &boxes, &ranked, &style).map_err(|e| e.to_string())?;
    let drawn: Vec<u32> = (0..10)
        .filter(|i| (i * 20..i * 20 + 20).any(|x| (0..40).any(|y| out.get_pixel(x, y) != img.get_pixel(x, y))))
        .collect();
    ensure!(drawn == vec![0, 1, 2, 3, 4], "annotated regions {drawn:?}");
    let strength: Vec<u32> = (0..5)
        .map(|i| out.get_pixel(i * 20 + 3, 20).0.iter().map(|&c| 255 - c as u32).sum())
        .collect();
    ensure!(strength.windows(2).all(|w| w[0] > w[1]), "stroke strength {strength:?}");
    Ok(format!("1000 vectors; 5 of 10 boxes drawn, strength {strength:?}"))
}

fn model_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_grad: f64 = 0.0;
    for arch in [Architecture::SingleStream, Architecture::DualStream] {
        let mut r = rng(79);
        let mut model = vqa_core::model::VqaModel::new(tiny_config(arch), 5).map_err(|e| e.to_string())?;
        let config = model.config().clone();
        let regions = random_regions(&mut r, 4, config.feature_dim);
        let ids = random_ids(&mut r, &config, 3);
        let out = model.forward(&ids, &regions).map_err(|e| e.to_string())?;
        for m in &out.trace.maps {
            for row in m.weights.rows() {
                ensure!((row.sum() - 1.0).abs() < 1e-5, "{arch:?}: row sums to {}", row.sum());
            }
        }
        let targets = random_targets(&mut r, 5);
        for p in check_gradients(&mut model, &ids, &regions, &targets, 20, &mut r) {
            worst_grad = worst_grad.max(p.relative_error());
            ensure!(p.relative_error() <= 1e-3, "{arch:?}: gradient {p:?}");
        }
        let short: Vec<u32> = ids.iter().copied().filter(|&i| i != PAD).collect();
        let a = model.forward(&short, &regions).map_err(|e| e.to_string())?.logits;
        for extra in 0..3 {
            let mut padded = short.clone();
            padded.resize(short.len() + extra + 1, PAD);
            let b = model.forward(&padded, &regions).map_err(|e| e.to_string())?.logits;
            ensure!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9), "{arch:?}: padding changes logits");
        }
        let vocab = vqa_core::model::Vocab::build(["what color is the square"]);
        let mut config = tiny_config(arch);
        config.vocab_size = vocab.len();
        let artifact = ModelArtifact {
            model: vqa_core::model::VqaModel::new(config, 5).map_err(|e| e.to_string())?,
            vocab,
            answers: vqa_core::finetune::AnswerSpace::from_labels((0..5).map(|i| i.to_string()).collect(), 1),
            extractor: ExtractorSpec::grid(4, 6),
            pretrained: Default::default(),
        };
        let loaded = ModelArtifact::from_bytes(&artifact.to_bytes().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let ids = artifact.vocab.tokenize("what color is the square", 6).map_err(|e| e.to_string())?;
        let x = artifact.model.forward(&ids, &regions).map_err(|e| e.to_string())?.logits;
        let y = loaded.model.forward(&ids, &regions).map_err(|e| e.to_string())?.logits;
        ensure!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()), "{arch:?}: reloaded logits differ");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(120), "took {t:?}");
    Ok(format!("both architectures, max gradient error {worst_grad:.1e}, {:.1}s", t.as_secs_f64()))
}

fn overfit_spec(arch: Architecture) -> TrainSpec {
    let mut config = ModelConfig::for_architecture(arch);
    config.hidden_dim = 64;
    config.n_heads = 4;
    config.dropout = 0.0;
    config.seed = 3;
    config.layers = match arch {
        Architecture::SingleStream => Layers::Single(2),
        Architecture::DualStream => Layers::Dual { language: 1, vision: 1, cross: 1 },
    };
    let mut spec = TrainSpec::new(config);
    spec.epochs = 60;
    spec.batch_size = 1;
    spec.learning_rate = 5e-4;
    spec.seed = 5;
    spec
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = FeatureStore::open(dir.path()).map_err(|e| e.to_string())?;
    let spec = ExtractorSpec::grid(16, 32);
    let extractor = SpecExtractor::new(spec.clone()).map_err(|e| e.to_string())?;
    let images: BTreeMap<String, Vec<u8>> = scene_images(32);
    let report = cache_features(&store, images.iter().map(|(k, v)| (k.as_str(), v.as_slice())), &extractor, 4, &|_, _| {})
        .map_err(|e| e.to_string())?;
    ensure!(report.failed.is_empty(), "feature extraction failed");
    let entries = scene_entries();
    let regions = load_regions(&entries, &store).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for arch in [Architecture::SingleStream, Architecture::DualStream] {
        let (artifact, outcome) = train(&entries, &store, &spec, &overfit_spec(arch), &mut |_| {}, None)
            .map_err(|e| e.to_string())?;
        let acc = soft_accuracy(&artifact, &entries, |id| regions.get(id)).map_err(|e| e.to_string())?;
        let (first, last) = (outcome.epoch_losses[0], *outcome.epoch_losses.last().unwrap());
        ensure!(acc >= 0.95, "{arch:?}: soft accuracy {acc:.3}");
        ensure!(last < first, "{arch:?}: loss {first:.4} -> {last:.4}");
        summary.push(format!("{arch:?} acc {acc:.2} loss {first:.3}->{last:.3}"));
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(300), "took {t:?}");
    Ok(format!("{}, {:.1}s", summary.join("; "), t.as_secs_f64()))
}

fn end_to_end(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let s = common::start().await;
        let (zip, csv) = scene_upload(32);
        let (st, up) = s.upload(zip, csv).await;
        ensure!(st == StatusCode::OK, "upload: {st} {up}");
        let ds = up["dataset_id"].as_str().unwrap().to_string();

        let (a, b) = tokio::join!(s.finetune(&ds, "lxmert"), s.finetune(&ds, "lxmert"));
        let mut codes = [a.0, b.0];
        codes.sort();
        ensure!(codes == [StatusCode::ACCEPTED, StatusCode::CONFLICT], "concurrent submit: {a:?} {b:?}");
        let job = if a.0 == StatusCode::ACCEPTED { &a.1 } else { &b.1 }["job_id"].as_str().unwrap().to_string();

        let seen = s.wait(&job, Duration::from_secs(180)).await;
        let progress: Vec<f64> = seen.iter().map(|v| v["progress"].as_f64().unwrap_or(-1.0)).collect();
        ensure!(progress.windows(2).all(|w| w[0] <= w[1]), "progress {progress:?}");
        let last = seen.last().unwrap();
        ensure!(last["state"] == "done", "job ended {last}");

        let (st, v) = s.eval_single(&job, png(&scene(48, COLORS[0].1, true)), COLOR_QUESTION).await;
        ensure!(st == StatusCode::OK, "single eval: {st} {v}");
        let (st, _) = s.get_bytes(v["annotated_image_url"].as_str().unwrap_or("/missing")).await;
        ensure!(st == StatusCode::OK, "annotated image: {st}");

        let files: Vec<(String, Vec<u8>)> = scene_images(32).into_iter().map(|(k, v)| (format!("{k}.png"), v)).collect();
        let rows: Vec<(String, String, Vec<String>)> = files
            .iter()
            .map(|(name, _)| (name.trim_end_matches(".png").to_string(), COLOR_QUESTION.to_string(), vec![]))
            .collect();
        let (st, v) = s.eval_batch(&job, zip_of(&files), csv_of(&rows)).await;
        ensure!(st == StatusCode::OK, "batch eval: {st} {v}");
        let (_, csv) = s.get_bytes(v["results_csv_url"].as_str().unwrap_or("/missing")).await;
        let mut reader = csv::Reader::from_reader(csv.as_slice());
        let n_rows = reader.records().count();
        ensure!(n_rows == 10, "{n_rows} CSV rows");
        let (_, zip) = s.get_bytes(v["annotated_zip_url"].as_str().unwrap_or("/missing")).await;
        let archive = zip::ZipArchive::new(Cursor::new(zip)).map_err(|e| e.to_string())?;
        let mut names: Vec<String> = archive.file_names().map(String::from).collect();
        names.sort();
        let mut want: Vec<String> = (0..10).map(|i| format!("what_color_is_the_square__{i}.png")).collect();
        want.sort();
        ensure!(names == want, "ZIP entries {names:?}");
        Ok(format!("{} polls, 10 CSV rows, 10 ZIP entries", seen.len()))
    })
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("cleaning pipeline oracle", Box::new(cleaning_oracle)),
        ("banner truth table", Box::new(|| banner_table(&rt))),
        ("attention aggregation oracle", Box::new(aggregation_oracle)),
        ("top-5 contract", Box::new(top5_contract)),
        ("model correctness", Box::new(model_correctness)),
        ("overfit check", Box::new(overfit)),
        ("end-to-end API flow", Box::new(|| end_to_end(&rt))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
