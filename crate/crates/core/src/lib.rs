//! Core of a self-hostable visual question answering platform.
//!
//! - [`dataset`]: upload ingestion, cleaning and the persisted dataset format
//! - [`features`]: region boxes and feature vectors per image, with a disk cache
//! - [`model`]: single-stream and dual-stream transformers with attention traces
//! - [`finetune`]: answer space, soft targets, training loop and prediction
//! - [`attention`]: region scoring from attention traces and box annotation

pub mod attention;
pub mod dataset;
pub mod features;
pub mod finetune;
pub mod fixtures;
pub mod model;
pub mod text;

mod fsutil;

pub use fsutil::write_atomic;
