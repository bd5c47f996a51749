use std::path::PathBuf;

use clap::{Args, ValueEnum};

use vqa_core::features::ExtractorSpec;

use crate::catalog::TrainDefaults;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorChoice {
    Grid,
    External,
}

/// Region feature extractor settings shared by training and evaluation.
#[derive(Debug, Clone, Args)]
pub struct ExtractorArgs {
    #[arg(long, env = "VQA_EXTRACTOR", value_enum, default_value = "grid")]
    pub extractor: ExtractorChoice,
    /// Base URL of an external extraction service.
    #[arg(long, env = "VQA_EXTRACTOR_ENDPOINT")]
    pub extractor_endpoint: Option<String>,
    #[arg(long, env = "VQA_MAX_REGIONS", default_value_t = 36)]
    pub max_regions: usize,
    #[arg(long, env = "VQA_FEATURE_DIM", default_value_t = 2048)]
    pub feature_dim: usize,
}

impl ExtractorArgs {
    pub fn spec(&self) -> anyhow::Result<ExtractorSpec> {
        let spec = match self.extractor {
            ExtractorChoice::Grid => ExtractorSpec::grid(self.max_regions, self.feature_dim),
            ExtractorChoice::External => {
                let endpoint = self
                    .extractor_endpoint
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("the external extractor needs an endpoint"))?;
                ExtractorSpec::external(endpoint, self.max_regions, self.feature_dim)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "VQA_DATA_DIR", default_value = "vqa-data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "VQA_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory with a built web front end, served at `/`.
    #[arg(long, env = "VQA_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long, env = "VQA_MAX_ZIP_BYTES", default_value_t = 512 * 1024 * 1024)]
    pub max_zip_bytes: usize,
    #[arg(long, env = "VQA_MAX_CSV_BYTES", default_value_t = 10 * 1024 * 1024)]
    pub max_csv_bytes: usize,
    #[arg(long, env = "VQA_MAX_IMAGE_BYTES", default_value_t = 32 * 1024 * 1024)]
    pub max_image_bytes: usize,
    /// Feature extraction threads.
    #[arg(long, env = "VQA_WORKERS", default_value_t = 4)]
    pub workers: usize,
    #[arg(long, env = "VQA_EPOCHS", default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, env = "VQA_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, env = "VQA_LEARNING_RATE", default_value_t = 5e-4)]
    pub learning_rate: f64,
    #[arg(long, env = "VQA_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "VQA_HIDDEN_DIM", default_value_t = 128)]
    pub hidden_dim: usize,
    #[arg(long, env = "VQA_HEADS", default_value_t = 4)]
    pub n_heads: usize,
}

/// Resolved server settings.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub extractor: ExtractorSpec,
    pub max_zip_bytes: usize,
    pub max_csv_bytes: usize,
    pub max_image_bytes: usize,
    pub workers: usize,
    pub train: TrainDefaults,
    /// Write the bundled sample image and questions on start-up.
    pub install_sample: bool,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            data_dir: data_dir.into(),
            static_dir: None,
            extractor: ExtractorSpec::default(),
            max_zip_bytes: 512 * 1024 * 1024,
            max_csv_bytes: 10 * 1024 * 1024,
            max_image_bytes: 32 * 1024 * 1024,
            workers: 4,
            train: TrainDefaults::default(),
            install_sample: true,
        }
    }

    pub fn from_args(args: &ServeArgs) -> anyhow::Result<Self> {
        Ok(ServerConfig {
            data_dir: args.data_dir.clone(),
            static_dir: args.static_dir.clone(),
            extractor: args.extractor.spec()?,
            max_zip_bytes: args.max_zip_bytes,
            max_csv_bytes: args.max_csv_bytes,
            max_image_bytes: args.max_image_bytes,
            workers: args.workers.max(1),
            train: TrainDefaults {
                epochs: args.epochs,
                batch_size: args.batch_size,
                learning_rate: args.learning_rate,
                seed: args.seed,
                hidden_dim: args.hidden_dim,
                n_heads: args.n_heads,
            },
            install_sample: true,
        })
    }

    /// Largest request body any endpoint accepts.
    pub fn body_limit(&self) -> usize {
        let files = self.max_zip_bytes.saturating_add(self.max_csv_bytes);
        files.max(self.max_image_bytes).saturating_add(1024 * 1024)
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.data_dir.join("datasets")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.data_dir.join("artifacts")
    }

    /// Everything under here is served at `/files`.
    pub fn public_dir(&self) -> PathBuf {
        self.data_dir.join("public")
    }
}
