//! Run configuration, checkpoints, manifests and the end-to-end pipeline.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod pipeline;

pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_FORMAT};
pub use config::{ModelConfig, RunConfig, SEED_ENV};
pub use manifest::{file_sha256, Manifest};
