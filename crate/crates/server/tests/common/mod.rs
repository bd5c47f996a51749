#![allow(dead_code)]

use std::time::{Duration, Instant};

use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::Value;
use tempfile::TempDir;
use vqa_core::features::ExtractorSpec;
use vqa_server::catalog::TrainDefaults;
use vqa_server::ServerConfig;

pub struct TestServer {
    pub base: String,
    pub dir: TempDir,
    pub client: reqwest::Client,
}

/// Small grid features and a small model so jobs finish in seconds.
pub fn tiny_config(data_dir: &std::path::Path) -> ServerConfig {
    let mut c = ServerConfig::new(data_dir);
    c.extractor = ExtractorSpec::grid(4, 16);
    c.workers = 2;
    c.train = TrainDefaults {
        epochs: 2,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 1,
        hidden_dim: 16,
        n_heads: 2,
    };
    c
}

pub async fn start_with(tweak: impl FnOnce(&mut ServerConfig)) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    tweak(&mut config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move {
        vqa_server::serve(config, listener).await.unwrap();
    });
    TestServer { base, dir, client: reqwest::Client::new() }
}

pub async fn start() -> TestServer {
    start_with(|_| {}).await
}

pub fn file(bytes: Vec<u8>, name: &str) -> Part {
    Part::bytes(bytes).file_name(name.to_string())
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn json(resp: reqwest::Response) -> (StatusCode, Value) {
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        Self::json(self.client.get(self.url(path)).send().await.unwrap()).await
    }

    pub async fn get_bytes(&self, path: &str) -> (StatusCode, Vec<u8>) {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        (resp.status(), resp.bytes().await.unwrap().to_vec())
    }

    pub async fn post_form(&self, path: &str, form: Form) -> (StatusCode, Value) {
        Self::json(self.client.post(self.url(path)).multipart(form).send().await.unwrap()).await
    }

    pub async fn post_json(&self, path: &str, body: Value) -> (StatusCode, Value) {
        Self::json(self.client.post(self.url(path)).json(&body).send().await.unwrap()).await
    }

    pub async fn upload(&self, zip: Vec<u8>, csv: Vec<u8>) -> (StatusCode, Value) {
        let form = Form::new().part("images", file(zip, "images.zip")).part("qa", file(csv, "qa.csv"));
        self.post_form("/api/dataset", form).await
    }

    pub async fn finetune(&self, dataset_id: &str, model_id: &str) -> (StatusCode, Value) {
        self.post_json("/api/finetune", serde_json::json!({"dataset_id": dataset_id, "model_id": model_id}))
            .await
    }

    /// Polls until the job is done or failed; returns every snapshot seen.
    pub async fn wait(&self, job_id: &str, timeout: Duration) -> Vec<Value> {
        let start = Instant::now();
        let mut seen = Vec::new();
        loop {
            let (status, v) = self.get(&format!("/api/finetune/{job_id}")).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            let state = v["state"].as_str().unwrap().to_string();
            seen.push(v);
            if state == "done" || state == "failed" {
                return seen;
            }
            assert!(start.elapsed() < timeout, "job {job_id} still {state}");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    pub async fn eval_single(&self, model: &str, image: Vec<u8>, question: &str) -> (StatusCode, Value) {
        let form = Form::new()
            .text("artifact_id", model.to_string())
            .text("question", question.to_string())
            .part("image", file(image, "image.png"));
        self.post_form("/api/eval/single", form).await
    }

    pub async fn eval_batch(&self, model: &str, zip: Vec<u8>, csv: Vec<u8>) -> (StatusCode, Value) {
        let form = Form::new()
            .text("artifact_id", model.to_string())
            .part("images", file(zip, "images.zip"))
            .part("qa", file(csv, "qa.csv"));
        self.post_form("/api/eval/batch", form).await
    }
}

pub fn code(v: &Value) -> &str {
    v["code"].as_str().unwrap_or("")
}

pub fn level(v: &Value) -> &str {
    v["banner"]["level"].as_str().unwrap_or("")
}
