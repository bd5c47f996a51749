//! HTTP API and headless commands for the VQA platform.

pub mod api;
pub mod catalog;
pub mod config;
pub mod error;
pub mod eval;
pub mod sample;
pub mod state;

use std::sync::Arc;

pub use api::router;
pub use config::ServerConfig;
pub use state::AppState;

/// Creates the data directories and, if configured, the sample assets.
pub fn prepare(config: &ServerConfig) -> std::io::Result<()> {
    for dir in [config.datasets_dir(), config.artifacts_dir(), config.public_dir()] {
        std::fs::create_dir_all(dir)?;
    }
    if config.install_sample {
        sample::install(&config.public_dir())?;
    }
    Ok(())
}

/// Binds `addr` and serves until the future is dropped or ctrl-c.
pub async fn serve(config: ServerConfig, listener: tokio::net::TcpListener) -> anyhow::Result<()> {
    prepare(&config)?;
    let state = Arc::new(AppState::new(config));
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = tokio::signal::ctrl_c().await;
            state.cancel_all();
        })
        .await?;
    Ok(())
}
