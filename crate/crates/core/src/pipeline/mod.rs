//! End-to-end orchestration: run configuration, the retrieval → optimization
//! → lighting → insertion stage pipeline, the run manifest, and a synthetic
//! fixture generator for exercising everything against consistent inputs.

mod config;
pub mod fixture;
mod manifest;
mod run;

pub use config::{load_config, CameraSpec, FrameSpec, PipelineConfig, PoseSpec};
pub use manifest::{EnvmapRecord, FrameRecord, RetrievalRecord, RunManifest};
pub use run::run_pipeline;
