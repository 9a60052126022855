//! Recognition and retrieval: embedding-based CAD search, pose matching by
//! feature-map distance, part-aware material classification via mask IOU, the
//! car-body fallback rule, correspondence-based merging, and lookup of the
//! shipped material priors.

mod features;
mod io;
mod parts;

pub use features::{builtin_features, builtin_features_adjoint, FeatureMap, FeatureSource};
pub use io::{read_feature_map, read_mask, write_feature_map, write_mask};
pub use parts::{
    assign_car_body, classify_materials, merge_by_correspondence, ClassifyOptions, IouMode,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assets::{EmbeddingVector, Library};
use crate::error::{Error, Result};
use crate::matgraph::{builtin_prior, MaterialGraph, PriorKind};

/// Sentinel for pixels not covered by any material group.
pub const BACKGROUND: u32 = u32::MAX;

/// Per-pixel material indices for one rendered view of an asset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaterialIndexMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; [`BACKGROUND`] marks uncovered pixels.
    pub indices: Vec<u32>,
    pub view_index: usize,
}

impl MaterialIndexMap {
    pub fn new(width: usize, height: usize, view_index: usize) -> Self {
        MaterialIndexMap {
            width,
            height,
            indices: vec![BACKGROUND; width * height],
            view_index,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.indices[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, index: u32) {
        self.indices[y * self.width + x] = index;
    }

    /// Pixel area of every non-background index.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &i in &self.indices {
            if i != BACKGROUND {
                *areas.entry(i).or_insert(0) += 1;
            }
        }
        areas
    }

    /// Every non-background index must belong to the asset's group set.
    pub fn validate_against(&self, known_indices: &std::collections::BTreeSet<u32>) -> Result<()> {
        for &i in &self.indices {
            if i != BACKGROUND && !known_indices.contains(&i) {
                return Err(Error::Integrity(format!(
                    "index map view {} references material index {i} absent from the asset",
                    self.view_index
                )));
            }
        }
        Ok(())
    }
}

/// Binary component mask for one view, e.g. the "windows" pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub label: String,
    pub confidence: f64,
    pub view_index: usize,
}

impl SegmentationMask {
    pub fn new(
        width: usize,
        height: usize,
        bits: Vec<bool>,
        label: String,
        confidence: f64,
        view_index: usize,
    ) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask `{label}`: {} bits for {width}x{height}",
                bits.len()
            )));
        }
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!(
                "mask `{label}`: confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(SegmentationMask {
            width,
            height,
            bits,
            label,
            confidence,
            view_index,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Semantic component a material index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentLabel {
    Windows,
    Wheels,
    Body,
    Unassigned,
}

impl ComponentLabel {
    pub fn name(self) -> &'static str {
        match self {
            ComponentLabel::Windows => "windows",
            ComponentLabel::Wheels => "wheels",
            ComponentLabel::Body => "body",
            ComponentLabel::Unassigned => "unassigned",
        }
    }

    pub fn from_name(name: &str) -> Option<ComponentLabel> {
        match name {
            "windows" => Some(ComponentLabel::Windows),
            "wheels" => Some(ComponentLabel::Wheels),
            "body" => Some(ComponentLabel::Body),
            "unassigned" => Some(ComponentLabel::Unassigned),
            _ => None,
        }
    }
}

/// How an index received its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentSource {
    Iou,
    BodyRule,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub label: ComponentLabel,
    /// `None` while the index is still unassigned.
    pub source: Option<AssignmentSource>,
    /// IOU that produced the label, when source is `iou`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

/// Material index -> component label mapping plus diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartAssignment {
    pub entries: BTreeMap<u32, AssignmentEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PartAssignment {
    pub fn label_of(&self, index: u32) -> ComponentLabel {
        self.entries
            .get(&index)
            .map(|e| e.label)
            .unwrap_or(ComponentLabel::Unassigned)
    }

    /// Indices currently carrying `label`.
    pub fn indices_with(&self, label: ComponentLabel) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|(_, e)| e.label == label)
            .map(|(&i, _)| i)
            .collect()
    }
}

/// Rank library assets by cosine similarity to the query, best first. Ties
/// break toward the lexicographically smaller asset id. Scores are exact
/// cosines: embeddings are unit vectors by construction.
pub fn retrieve_cad(
    query: &EmbeddingVector,
    library: &Library,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if library.assets.is_empty() {
        return Err(Error::Empty("library has no assets to retrieve from".into()));
    }
    let mut ranked = Vec::with_capacity(library.assets.len());
    for asset in &library.assets {
        let emb = library.embedding_of(asset);
        if emb.dim() != query.dim() {
            return Err(Error::Dimension(format!(
                "query dim {} vs embedding `{}` dim {}",
                query.dim(),
                emb.id,
                emb.dim()
            )));
        }
        ranked.push((asset.id.clone(), query.dot(emb)));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Index of the candidate view whose feature map is closest to the reference
/// in summed squared descriptor difference. Ties resolve to the lowest index.
pub fn match_pose(ref_feature: &FeatureMap, cad_features: &[FeatureMap]) -> Result<usize> {
    if cad_features.is_empty() {
        return Err(Error::Empty("no candidate views to match against".into()));
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (j, cand) in cad_features.iter().enumerate() {
        if !cand.same_shape(ref_feature) {
            return Err(Error::Dimension(format!(
                "view {j}: feature map {}x{}x{} vs reference {}x{}x{}",
                cand.planes.width,
                cand.planes.height,
                cand.planes.channels,
                ref_feature.planes.width,
                ref_feature.planes.height,
                ref_feature.planes.channels,
            )));
        }
        let dist: f64 = cand
            .planes
            .data
            .iter()
            .zip(&ref_feature.planes.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = j;
        }
    }
    Ok(best)
}

/// Deep copy of the shipped prior for a component label. The body prior comes
/// in painted and unpainted variants.
pub fn retrieve_material_prior(label: &str, body_painted: bool) -> Result<MaterialGraph> {
    let kind = match label {
        "windows" => PriorKind::Window,
        "wheels" => PriorKind::Wheel,
        "body" => {
            if body_painted {
                PriorKind::BodyPainted
            } else {
                PriorKind::BodyUnpainted
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown component label `{other}`; known labels: windows, wheels, body"
            )))
        }
    };
    Ok(builtin_prior(kind))
}
