//! Part-aware material recognition: per-component IOU classification against
//! segmentation masks, the largest-remaining-area car-body rule, and
//! correspondence-based merging of leftover indices into the body.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

use super::{
    AssignmentEntry, AssignmentSource, ComponentLabel, FeatureMap, MaterialIndexMap,
    PartAssignment, SegmentationMask, BACKGROUND,
};

/// Which pixel sets enter the IOU for an active material index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouMode {
    /// IOU(pixels of the index, whole component mask).
    #[default]
    WholeMask,
    /// IOU(pixels of the index, mask ∩ the index's support dilated by 1 px).
    DilatedSupport,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassifyOptions {
    pub iou_mode: IouMode,
    /// When set, an index is labeled if its IOU clears the threshold in any
    /// view, instead of only in the component's highest-confidence view.
    pub union_views: bool,
}

/// Classify material indices into components by mask IOU. For each component
/// label the view with the highest mask confidence is consulted (all views
/// under [`ClassifyOptions::union_views`]); an active index joins the
/// component iff its IOU strictly exceeds `iou_threshold`. An index claimed by
/// several components keeps the label with the larger IOU.
pub fn classify_materials(
    index_maps: &[MaterialIndexMap],
    masks: &[SegmentationMask],
    iou_threshold: f64,
    options: ClassifyOptions,
) -> Result<PartAssignment> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::Invalid(format!(
            "iou threshold {iou_threshold} outside (0, 1)"
        )));
    }
    let by_view: BTreeMap<usize, &MaterialIndexMap> =
        index_maps.iter().map(|m| (m.view_index, m)).collect();
    for mask in masks {
        let Some(map) = by_view.get(&mask.view_index) else {
            return Err(Error::Invalid(format!(
                "mask `{}` view {} has no matching index map",
                mask.label, mask.view_index
            )));
        };
        if map.width != mask.width || map.height != mask.height {
            return Err(Error::Dimension(format!(
                "mask `{}` view {}: {}x{} vs index map {}x{}",
                mask.label, mask.view_index, mask.width, mask.height, map.width, map.height
            )));
        }
    }

    let mut assignment = PartAssignment::default();
    for map in index_maps {
        for index in map.areas().keys() {
            assignment.entries.entry(*index).or_insert(AssignmentEntry {
                label: ComponentLabel::Unassigned,
                source: None,
                iou: None,
            });
        }
    }

    // Group masks by label; consult either the best-confidence view or all.
    let mut labels: BTreeMap<&str, Vec<&SegmentationMask>> = BTreeMap::new();
    for mask in masks {
        labels.entry(mask.label.as_str()).or_default().push(mask);
    }
    for (label_name, group) in labels {
        let Some(label) = ComponentLabel::from_name(label_name) else {
            return Err(Error::Invalid(format!(
                "mask label `{label_name}` is not a known component"
            )));
        };
        let selected: Vec<&SegmentationMask> = if options.union_views {
            group
        } else {
            let best = group
                .iter()
                .copied()
                .max_by(|a, b| {
                    a.confidence
                        .total_cmp(&b.confidence)
                        .then_with(|| b.view_index.cmp(&a.view_index))
                })
                .expect("non-empty label group");
            vec![best]
        };
        for mask in selected {
            let map = by_view[&mask.view_index];
            for (index, iou) in active_ious(map, mask, options.iou_mode) {
                if iou > iou_threshold {
                    let entry = assignment.entries.get_mut(&index).expect("active index");
                    if entry.source.is_none() || entry.iou.is_some_and(|prev| iou > prev) {
                        *entry = AssignmentEntry {
                            label,
                            source: Some(AssignmentSource::Iou),
                            iou: Some(iou),
                        };
                    }
                }
            }
        }
    }
    Ok(assignment)
}

/// IOU per active index (indices whose pixels intersect the mask).
fn active_ious(
    map: &MaterialIndexMap,
    mask: &SegmentationMask,
    mode: IouMode,
) -> Vec<(u32, f64)> {
    let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
    let mut area: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, &idx) in map.indices.iter().enumerate() {
        if idx == BACKGROUND {
            continue;
        }
        *area.entry(idx).or_insert(0) += 1;
        if mask.bits[i] {
            *inter.entry(idx).or_insert(0) += 1;
        }
    }
    let mask_area = mask.area();
    inter
        .into_iter()
        .map(|(idx, inter_px)| {
            let idx_area = area[&idx];
            let iou = match mode {
                IouMode::WholeMask => {
                    let union = idx_area + mask_area - inter_px;
                    inter_px as f64 / union as f64
                }
                IouMode::DilatedSupport => {
                    // Operand: mask restricted to the index's 1-px-dilated
                    // support; intersection with the index pixels is the same
                    // set as against the whole mask.
                    let seg_px = mask_restricted_area(map, mask, idx);
                    let union = idx_area + seg_px - inter_px;
                    inter_px as f64 / union as f64
                }
            };
            (idx, iou)
        })
        .collect()
}

/// Pixels of `mask` lying inside the 1-px (4-neighborhood) dilation of the
/// pixels carrying `index`.
fn mask_restricted_area(map: &MaterialIndexMap, mask: &SegmentationMask, index: u32) -> usize {
    let (w, h) = (map.width, map.height);
    let mut dilated = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if map.get(x, y) == index {
                dilated[y * w + x] = true;
                if x > 0 {
                    dilated[y * w + x - 1] = true;
                }
                if x + 1 < w {
                    dilated[y * w + x + 1] = true;
                }
                if y > 0 {
                    dilated[(y - 1) * w + x] = true;
                }
                if y + 1 < h {
                    dilated[(y + 1) * w + x] = true;
                }
            }
        }
    }
    dilated
        .iter()
        .zip(&mask.bits)
        .filter(|(&d, &m)| d && m)
        .count()
}

/// Promote the largest-area unassigned index in `index_map` to the car body.
/// Already-assigned indices are never relabeled; if nothing is unassigned the
/// assignment is returned unchanged with a warning recorded.
pub fn assign_car_body(
    assignment: &PartAssignment,
    index_map: &MaterialIndexMap,
) -> PartAssignment {
    let mut out = assignment.clone();
    let areas = index_map.areas();
    let candidate = areas
        .iter()
        .filter(|(idx, _)| out.label_of(**idx) == ComponentLabel::Unassigned)
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(&idx, _)| idx);
    match candidate {
        Some(idx) => {
            out.entries.insert(
                idx,
                AssignmentEntry {
                    label: ComponentLabel::Body,
                    source: Some(AssignmentSource::BodyRule),
                    iou: None,
                },
            );
        }
        None => out
            .warnings
            .push("car-body rule: no unassigned material index remains".into()),
    }
    out
}

/// Mutual-nearest-neighbor correspondences between the remaining (unassigned)
/// regions of the reference and the CAD render; any material index receiving
/// at least `min_hits` correspondence endpoints is proposed for merging into
/// the body. Similarity is cosine over per-pixel descriptors with a ratio
/// test: the runner-up must score below `ratio` times the best match.
pub fn merge_by_correspondence(
    ref_feat: &FeatureMap,
    cad_feat: &FeatureMap,
    ref_remaining: &SegmentationMask,
    cad_remaining: &SegmentationMask,
    cad_index_map: &MaterialIndexMap,
    min_hits: usize,
) -> Result<BTreeSet<u32>> {
    if ref_feat.planes.channels != cad_feat.planes.channels {
        return Err(Error::Dimension(format!(
            "feature channels differ: {} vs {}",
            ref_feat.planes.channels, cad_feat.planes.channels
        )));
    }
    if ref_feat.planes.width != ref_remaining.width
        || ref_feat.planes.height != ref_remaining.height
        || cad_feat.planes.width != cad_remaining.width
        || cad_feat.planes.height != cad_remaining.height
        || cad_index_map.width != cad_remaining.width
        || cad_index_map.height != cad_remaining.height
    {
        return Err(Error::Dimension(
            "feature/mask/index-map resolutions disagree".into(),
        ));
    }

    const RATIO: f64 = 0.9;
    let ref_px = masked_pixels(ref_remaining);
    let cad_px = masked_pixels(cad_remaining);
    if ref_px.is_empty() || cad_px.is_empty() {
        return Ok(BTreeSet::new());
    }

    let mut hits: BTreeMap<u32, usize> = BTreeMap::new();
    for &(rx, ry) in &ref_px {
        let Some(best_cad) = best_match(ref_feat, rx, ry, cad_feat, &cad_px, RATIO) else {
            continue;
        };
        // Mutual check: the cad pixel must pick this ref pixel back.
        let Some(back) = best_match(cad_feat, best_cad.0, best_cad.1, ref_feat, &ref_px, RATIO)
        else {
            continue;
        };
        if back != (rx, ry) {
            continue;
        }
        let idx = cad_index_map.get(best_cad.0, best_cad.1);
        if idx != BACKGROUND {
            *hits.entry(idx).or_insert(0) += 1;
        }
    }
    Ok(hits
        .into_iter()
        .filter(|&(_, n)| n >= min_hits)
        .map(|(idx, _)| idx)
        .collect())
}

fn masked_pixels(mask: &SegmentationMask) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                px.push((x, y));
            }
        }
    }
    px
}

/// Best cosine match for `from`'s descriptor at (x, y) among `candidates` in
/// `to`; `None` when the ratio test fails. Ties keep the earliest candidate.
fn best_match(
    from: &FeatureMap,
    x: usize,
    y: usize,
    to: &FeatureMap,
    candidates: &[(usize, usize)],
    ratio: f64,
) -> Option<(usize, usize)> {
    let d = from.descriptor(x, y);
    let mut best_px = None;
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &(cx, cy) in candidates {
        let sim = cosine(&d, &to.descriptor(cx, cy));
        if sim > best {
            second = best;
            best = sim;
            best_px = Some((cx, cy));
        } else if sim > second {
            second = sim;
        }
    }
    if best <= 0.0 {
        return None;
    }
    if candidates.len() > 1 && second >= ratio * best {
        return None;
    }
    best_px
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
