//! Run manifest: one JSON record of every decision and artifact of a run,
//! written next to the outputs. Identical inputs, parameters and seed produce
//! a byte-identical manifest; artifact paths are recorded as bare file names
//! so the record does not depend on where the output directory lives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::matopt::LossReport;
use crate::retrieval::PartAssignment;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub id: String,
    /// Cosine similarity to the query embedding.
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvmapRecord {
    pub id: usize,
    /// File name inside the output directory.
    pub path: String,
    /// Fraction of panorama texels at or above the overexposure threshold;
    /// recorded as a diagnostic only.
    pub saturation_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Background file name.
    pub background: String,
    /// Id of the environment map selected for the insertion point.
    pub envmap: usize,
    /// Composite file name inside the output directory.
    pub composite: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    /// Stage names in completion order; a partial manifest ends early.
    pub completed_stages: Vec<String>,
    /// SHA-256 hex digest per input file.
    pub input_digests: BTreeMap<String, String>,
    /// Ranked retrieval results, best first.
    pub retrieval: Vec<RetrievalRecord>,
    pub chosen_asset: Option<String>,
    /// Index into the yaw grid of the matched pose.
    pub matched_view: Option<usize>,
    pub matched_yaw_degrees: Option<f64>,
    pub assignment: Option<PartAssignment>,
    pub losses: Option<LossReport>,
    pub envmaps: Vec<EnvmapRecord>,
    pub frames: Vec<FrameRecord>,
    pub warnings: Vec<String>,
}
