use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use vqa_core::dataset::{build_dataset, ingest_images, load_dataset, save_dataset, Level};
use vqa_core::features::{FeatureStore, SpecExtractor};
use vqa_core::finetune::{run_finetune, FinetuneRequest, JobTracker};
use vqa_core::model::load_model;
use vqa_server::api::UPLOAD_ARCHIVE;
use vqa_server::catalog::{architecture_for, TrainDefaults, TrainOverrides};
use vqa_server::config::{ExtractorArgs, ServeArgs};
use vqa_server::eval::evaluate_batch;
use vqa_server::ServerConfig;

#[derive(Parser)]
#[command(name = "vqa", version, about = "Visual question answering: dataset cleaning, fine-tuning and annotated evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP server.
    Serve(ServeArgs),
    /// Clean an upload (images ZIP + questions CSV) and print the report.
    Prep {
        zip: PathBuf,
        csv: PathBuf,
        /// Store the cleaned dataset in this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a model on a dataset directory written by `prep --out`.
    Train {
        dataset: PathBuf,
        /// visualbert or lxmert.
        #[arg(long)]
        model: String,
        /// Where to write the model artifact.
        #[arg(long)]
        out: PathBuf,
        /// JSON object of training overrides, e.g. '{"epochs": 3}'.
        #[arg(long)]
        overrides: Option<String>,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
    /// Answer every row of a questions CSV and write results.csv and annotated.zip.
    EvalBatch {
        /// Model artifact file.
        #[arg(long)]
        model: PathBuf,
        zip: PathBuf,
        csv: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn read(path: &PathBuf) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn prep(zip: PathBuf, csv: PathBuf, out: Option<PathBuf>) -> anyhow::Result<()> {
    let archive = read(&zip)?;
    let build = build_dataset(&archive, &read(&csv)?);
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "banner": build.outcome,
            "report": build.report,
        }))?
    );
    if build.outcome.level == Level::Error {
        bail!("the upload is not usable");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        vqa_core::write_atomic(&dir.join(UPLOAD_ARCHIVE), &archive)?;
        save_dataset(&dir, &build.entries, &build.report)?;
        eprintln!("dataset written to {}", dir.display());
    }
    Ok(())
}

fn train(
    dataset: PathBuf,
    model: String,
    out: PathBuf,
    overrides: Option<String>,
    extractor: ExtractorArgs,
) -> anyhow::Result<()> {
    let arch = architecture_for(&model).with_context(|| format!("unknown model {model}"))?;
    let overrides: TrainOverrides = match overrides {
        Some(s) => serde_json::from_str(&s).context("parsing overrides")?,
        None => TrainOverrides::default(),
    };
    let spec = overrides.apply(TrainDefaults::default().spec_for(arch))?;
    let entries = load_dataset(&dataset)?;
    let images = ingest_images(&read(&dataset.join(UPLOAD_ARCHIVE))?)?;
    let store = FeatureStore::open(dataset.join("features"))?;
    let extractor = SpecExtractor::new(extractor.spec()?)?;
    let tracker = JobTracker::new("cli");
    let req = FinetuneRequest {
        entries: &entries,
        images: &images.bytes,
        store: &store,
        extractor: &extractor,
        spec,
        artifact_path: out.clone(),
        workers: 4,
    };
    let cancel = AtomicBool::new(false);
    let done = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|s| {
        s.spawn(|| {
            let mut last = String::new();
            while !done.load(std::sync::atomic::Ordering::Relaxed) {
                let job = tracker.snapshot();
                if job.message != last {
                    eprintln!("[{:>5.1}%] {}", job.progress * 100.0, job.message);
                    last = job.message;
                }
                std::thread::sleep(std::time::Duration::from_millis(200));
            }
        });
        let result = run_finetune(&req, &tracker, &cancel);
        done.store(true, std::sync::atomic::Ordering::Relaxed);
        result
    })?;
    eprintln!("model written to {}", out.display());
    Ok(())
}

fn eval_batch(model: PathBuf, zip: PathBuf, csv: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let artifact = load_model(&model)?;
    let extractor = SpecExtractor::new(artifact.extractor.clone())?;
    let style = vqa_core::attention::AnnotationStyle::default();
    let result = evaluate_batch(&artifact, &extractor, &read(&zip)?, &read(&csv)?, &style)?;
    std::fs::create_dir_all(&out)?;
    vqa_core::write_atomic(&out.join("results.csv"), &result.results_csv)?;
    vqa_core::write_atomic(&out.join("annotated.zip"), &result.annotated_zip)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "n_processed": result.n_processed,
            "n_failed": result.n_failed,
            "failures": result.failures,
        }))?
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve(args) => {
            let config = ServerConfig::from_args(&args)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&args.bind).await?;
                tracing::info!("listening on http://{}", listener.local_addr()?);
                vqa_server::serve(config, listener).await
            })
        }
        Command::Prep { zip, csv, out } => prep(zip, csv, out),
        Command::Train { dataset, model, out, overrides, extractor } => {
            train(dataset, model, out, overrides, extractor)
        }
        Command::EvalBatch { model, zip, csv, out } => eval_batch(model, zip, csv, out),
    }
}
