//! Stage pipeline: retrieval → pose match → part assignment → material
//! optimization → lighting estimation → per-frame insertion. Each stage has a
//! name; a failing stage aborts the run with that name after persisting the
//! partial manifest next to the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::assets::{filter_assets, load_embeddings, load_library, CadAsset};
use crate::error::{Error, Result};
use crate::image_io;
use crate::img::ImageRgb;
use crate::lighting::{
    compose_envmap, ldr_to_hdr_sky, read_fisheye, saturation_fraction, select_envmap,
    stitch_panorama, write_envmap,
};
use crate::matgraph::{write_graph, MaterialGraph, TextureSet};
use crate::matopt::optimize_materials;
use crate::math::{vec3, Mat3, Rigid, Vec3};
use crate::render::{
    composite, rasterize, render_shadow_plane, sample_textures, shade, EnvironmentMap,
    RenderBuffers,
};
use crate::retrieval::{
    assign_car_body, builtin_features, classify_materials, match_pose, merge_by_correspondence,
    read_mask, retrieve_cad, retrieve_material_prior, AssignmentEntry, AssignmentSource,
    ClassifyOptions, ComponentLabel, FeatureMap, MaterialIndexMap, PartAssignment,
    SegmentationMask,
};

use super::config::PipelineConfig;
use super::manifest::{EnvmapRecord, FrameRecord, RetrievalRecord, RunManifest};

/// Panorama texels at or above this LDR value count as overexposed.
const SATURATION_THRESHOLD: f64 = 0.99;
/// Mutual-correspondence hits needed before a leftover index merges into the
/// body.
const MERGE_MIN_HITS: usize = 3;
/// Environment resolution cap for the shadow-plane integral, which is far
/// more expensive per texel than surface shading.
const SHADOW_ENV_HEIGHT: usize = 16;

/// Run every stage, writing artifacts and `manifest.json` into the output
/// directory. On a stage failure the partial manifest is persisted as
/// `manifest_partial.json` and the error names the stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;

    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        ..RunManifest::default()
    };

    match run_stages(config, &mut manifest) {
        Ok(()) => {
            write_manifest(&config.output_dir.join("manifest.json"), &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            // best effort: the stage error is the one worth reporting
            let _ = write_manifest(&config.output_dir.join("manifest_partial.json"), &manifest);
            Err(e)
        }
    }
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::parse(path, "manifest", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run one named stage, recording completion in the manifest.
fn stage<T>(
    manifest: &mut RunManifest,
    name: &str,
    f: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    let out = f(manifest).map_err(|e| e.in_stage(name))?;
    manifest.completed_stages.push(name.to_string());
    Ok(out)
}

fn run_stages(config: &PipelineConfig, manifest: &mut RunManifest) -> Result<()> {
    stage(manifest, "digest_inputs", |m| digest_inputs(config, m))?;

    let library = stage(manifest, "load_library", |_| load_library(&config.library))?;
    let qualified = stage(manifest, "filter", |m| {
        let filtered = filter_assets(&library);
        if filtered.assets.is_empty() {
            return Err(Error::Empty(
                "no qualified assets left after filtering".into(),
            ));
        }
        m.warnings.extend(
            library
                .assets
                .iter()
                .filter(|a| !a.qualified)
                .map(|a| format!("asset `{}` filtered out: unqualified", a.id)),
        );
        Ok(filtered)
    })?;

    let asset: CadAsset = stage(manifest, "retrieve", |m| {
        let embeddings =
            load_embeddings(&config.query_embedding_bin, &config.query_embedding_index)?;
        let query = match &config.query_id {
            Some(id) => embeddings.get(id).ok_or_else(|| {
                Error::Invalid(format!("query id `{id}` not found in embedding index"))
            })?,
            None => {
                embeddings.values().next().ok_or_else(|| {
                    Error::Empty("query embedding index is empty".into())
                })?
            }
        };
        let ranked = retrieve_cad(query, &qualified, 5)?;
        m.retrieval = ranked
            .iter()
            .map(|(id, score)| RetrievalRecord {
                id: id.clone(),
                score: *score,
            })
            .collect();
        let chosen = ranked[0].0.clone();
        m.chosen_asset = Some(chosen.clone());
        Ok(qualified.asset(&chosen).expect("ranked id from library").clone())
    })?;

    let reference = stage(manifest, "load_reference", |_| {
        let img = image_io::read_png(&config.reference_image)?;
        let cam = config.reference_camera.to_camera();
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::Dimension(format!(
                "reference image {}x{} vs camera {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
        Ok(img)
    })?;

    let ref_camera = config.reference_camera.to_camera();

    let masks = stage(manifest, "load_masks", |_| {
        let masks = config
            .masks
            .iter()
            .map(|p| read_mask(p))
            .collect::<Result<Vec<_>>>()?;
        for mask in &masks {
            if mask.width != ref_camera.width || mask.height != ref_camera.height {
                return Err(Error::Dimension(format!(
                    "mask `{}` is {}x{} but the reference camera is {}x{}",
                    mask.label, mask.width, mask.height, ref_camera.width, ref_camera.height
                )));
            }
        }
        Ok(masks)
    })?;

    // pose matching and merging compare shapes, not colors: the reference
    // side is the union of its component masks rendered white on black
    let ref_features = builtin_features(&mask_union_silhouette(&masks));

    let (matched_pose, matched_buffers) = stage(manifest, "match_pose", |m| {
        let base = config.reference_insertion.to_rigid();
        let views = (360 / config.pose_grid_degrees) as usize;
        let mut features = Vec::with_capacity(views);
        let mut poses = Vec::with_capacity(views);
        for k in 0..views {
            let yaw = (k as f64 * config.pose_grid_degrees as f64).to_radians();
            let pose = Rigid::new(Mat3::rot_z(yaw).mul_mat(base.rotation), base.translation);
            let buffers = rasterize(&asset.mesh, &pose, &ref_camera)?;
            features.push(builtin_features(&silhouette(&buffers)));
            poses.push(pose);
        }
        let view = match_pose(&ref_features, &features)?;
        m.matched_view = Some(view);
        m.matched_yaw_degrees = Some(view as f64 * config.pose_grid_degrees as f64);
        let buffers = rasterize(&asset.mesh, &poses[view], &ref_camera)?;
        Ok((poses[view], buffers))
    })?;

    let index_map = index_map_of(&matched_buffers, masks[0].view_index);

    let assignment = stage(manifest, "classify", |_| {
        let assignment = classify_materials(
            std::slice::from_ref(&index_map),
            &masks,
            config.iou_threshold,
            ClassifyOptions::default(),
        )?;
        Ok(assign_car_body(&assignment, &index_map))
    })?;

    let assignment = stage(manifest, "merge", |m| {
        let merged = if config.merge_leftover {
            merge_leftover(
                &ref_features,
                &matched_buffers,
                &index_map,
                &masks,
                &assignment,
                m,
            )?
        } else {
            assignment.clone()
        };
        m.assignment = Some(merged.clone());
        Ok(merged)
    })?;

    let priors = stage(manifest, "priors", |m| {
        let mut priors: BTreeMap<ComponentLabel, MaterialGraph> = BTreeMap::new();
        for label in [
            ComponentLabel::Body,
            ComponentLabel::Windows,
            ComponentLabel::Wheels,
        ] {
            if assignment.indices_with(label).is_empty() {
                continue;
            }
            priors.insert(
                label,
                retrieve_material_prior(label.name(), config.body_painted)?,
            );
        }
        if priors.is_empty() {
            m.warnings
                .push("no component got a label; falling back to the body prior".into());
            priors.insert(
                ComponentLabel::Body,
                retrieve_material_prior("body", config.body_painted)?,
            );
        }
        Ok(priors)
    })?;

    let envmaps = stage(manifest, "lighting", |m| {
        let mut envmaps = Vec::with_capacity(config.fisheye_pairs.len());
        for (i, (left_path, right_path)) in config.fisheye_pairs.iter().enumerate() {
            let left = read_fisheye(left_path)?;
            let right = read_fisheye(right_path)?;
            let pano = stitch_panorama(&left, &right, config.pano_height)?;
            let saturation = saturation_fraction(&pano, SATURATION_THRESHOLD);
            let sky = ldr_to_hdr_sky(&pano, &config.sky)?;
            let (env, warnings) = compose_envmap(&sky, &pano, None, &config.sky)?;
            m.warnings.extend(warnings);
            let name = format!("envmap_{i}.pfm");
            write_envmap(&config.output_dir.join(&name), &env)?;
            m.envmaps.push(EnvmapRecord {
                id: i,
                path: name,
                saturation_fraction: saturation,
            });
            envmaps.push(env);
        }
        Ok(envmaps)
    })?;

    let graphs = stage(manifest, "optimize", |m| {
        let env = &envmaps[select_envmap(&envmaps, config.frames[0].insertion.translation)?];
        let (graphs, report) = optimize_materials(
            &asset.mesh,
            &matched_pose,
            &ref_camera,
            &assignment,
            &priors,
            &reference,
            &masks,
            env,
            &config.weights,
            &config.optimize,
        )?;
        for (label, graph) in &graphs {
            write_graph(
                &config.output_dir.join(format!("graph_{}.json", label.name())),
                graph,
            )?;
        }
        m.losses = Some(report);
        Ok(graphs)
    })?;

    let frames = stage(manifest, "render", |_| {
        render_frames(config, &asset, &assignment, &graphs, &envmaps)
    })?;
    manifest.frames = frames;
    Ok(())
}

/// White-on-black coverage image used for pose-matching features.
fn silhouette(buffers: &RenderBuffers) -> ImageRgb {
    let mut img = ImageRgb::new(buffers.width, buffers.height);
    for (px, &cov) in img.data.iter_mut().zip(&buffers.coverage) {
        if cov {
            *px = [1.0; 3];
        }
    }
    img
}

/// White wherever any component mask is set.
fn mask_union_silhouette(masks: &[SegmentationMask]) -> ImageRgb {
    let mut img = ImageRgb::new(masks[0].width, masks[0].height);
    for mask in masks {
        for (px, &bit) in img.data.iter_mut().zip(&mask.bits) {
            if bit {
                *px = [1.0; 3];
            }
        }
    }
    img
}

fn index_map_of(buffers: &RenderBuffers, view_index: usize) -> MaterialIndexMap {
    let mut map = MaterialIndexMap::new(buffers.width, buffers.height, view_index);
    for (i, &cov) in buffers.coverage.iter().enumerate() {
        if cov {
            map.indices[i] = buffers.material[i];
        }
    }
    map
}

/// Merge leftover indices into the body by mutual feature correspondence.
/// Needs a whole-vehicle mask labeled `car`; without one the stage is a
/// no-op with a warning.
fn merge_leftover(
    ref_features: &FeatureMap,
    buffers: &RenderBuffers,
    index_map: &MaterialIndexMap,
    masks: &[SegmentationMask],
    assignment: &PartAssignment,
    manifest: &mut RunManifest,
) -> Result<PartAssignment> {
    let Some(car) = masks.iter().find(|m| m.label == "car") else {
        manifest
            .warnings
            .push("merge requested but no `car` mask provided; skipped".into());
        return Ok(assignment.clone());
    };
    // reference pixels not explained by any component mask
    let mut ref_bits = car.bits.clone();
    for mask in masks {
        if mask.label == "car" || mask.width != car.width || mask.height != car.height {
            continue;
        }
        for (b, &m) in ref_bits.iter_mut().zip(&mask.bits) {
            *b = *b && !m;
        }
    }
    let ref_remaining = SegmentationMask::new(
        car.width,
        car.height,
        ref_bits,
        "remaining".into(),
        car.confidence,
        car.view_index,
    )?;
    let cad_bits: Vec<bool> = (0..buffers.coverage.len())
        .map(|i| {
            buffers.coverage[i]
                && assignment.label_of(buffers.material[i]) == ComponentLabel::Unassigned
        })
        .collect();
    let cad_remaining = SegmentationMask::new(
        buffers.width,
        buffers.height,
        cad_bits,
        "remaining".into(),
        1.0,
        index_map.view_index,
    )?;
    let cad_features = builtin_features(&silhouette(buffers));
    let merged_indices = merge_by_correspondence(
        ref_features,
        &cad_features,
        &ref_remaining,
        &cad_remaining,
        index_map,
        MERGE_MIN_HITS,
    )?;
    let mut out = assignment.clone();
    for idx in merged_indices {
        out.entries.insert(
            idx,
            AssignmentEntry {
                label: ComponentLabel::Body,
                source: Some(AssignmentSource::Merged),
                iou: None,
            },
        );
    }
    Ok(out)
}

/// Render and composite every frame. Frames are independent and run in
/// parallel; results keep config order.
fn render_frames(
    config: &PipelineConfig,
    asset: &CadAsset,
    assignment: &PartAssignment,
    graphs: &BTreeMap<ComponentLabel, MaterialGraph>,
    envmaps: &[EnvironmentMap],
) -> Result<Vec<FrameRecord>> {
    // evaluate each component graph once, then share per material index
    let fallback = *graphs.keys().next().expect("priors stage guarantees a graph");
    let mut label_textures: BTreeMap<ComponentLabel, TextureSet> = BTreeMap::new();
    for (label, graph) in graphs {
        let (tex, _) = graph.evaluate(config.optimize.texture_size, config.optimize.texture_size)?;
        label_textures.insert(*label, tex);
    }
    let mut textures: BTreeMap<u32, TextureSet> = BTreeMap::new();
    for idx in asset.mesh.material_indices() {
        let label = assignment.label_of(idx);
        let label = if graphs.contains_key(&label) { label } else { fallback };
        textures.insert(idx, label_textures[&label].clone());
    }

    config
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let camera = frame.camera.to_camera();
            let background = image_io::read_png(&frame.background)?;
            if background.width != camera.width || background.height != camera.height {
                return Err(Error::Dimension(format!(
                    "frame {i}: background {}x{} vs camera {}x{}",
                    background.width, background.height, camera.width, camera.height
                )));
            }
            let pose = frame.insertion.to_rigid();
            let env_idx = select_envmap(envmaps, pose.translation)?;
            let env = &envmaps[env_idx];

            let buffers = rasterize(&asset.mesh, &pose, &camera)?;
            let (grid, _) = sample_textures(&buffers, &textures)?;
            let (foreground, alpha) = shade(&grid, env, &camera)?;
            let shadow = render_shadow_plane(
                &asset.mesh,
                &pose,
                ground_point(&asset.mesh, &pose),
                vec3(0.0, 0.0, 1.0),
                &env.downsampled(SHADOW_ENV_HEIGHT),
                &camera,
            )?;
            let out = composite(
                &foreground,
                &alpha,
                &shadow,
                &background,
                config.exposure,
                config.gamma,
            )?;
            let name = format!("composite_{i}.png");
            image_io::write_png(&config.output_dir.join(&name), &out)?;
            Ok(FrameRecord {
                background: file_name(&frame.background),
                envmap: env_idx,
                composite: name,
            })
        })
        .collect()
}

/// Shadow plane anchor: the lowest point of the posed mesh (heuristic ground
/// contact).
fn ground_point(mesh: &crate::assets::TriangleMesh, pose: &Rigid) -> Vec3 {
    let min_z = mesh
        .vertices
        .iter()
        .map(|&v| pose.apply(v).z)
        .fold(f64::INFINITY, f64::min);
    vec3(pose.translation.x, pose.translation.y, min_z)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// SHA-256 every configured input file (library contents included) into the
/// manifest, keyed by file name (library files by path inside the library).
fn digest_inputs(config: &PipelineConfig, manifest: &mut RunManifest) -> Result<()> {
    let mut singles: Vec<PathBuf> = vec![
        config.reference_image.clone(),
        config.query_embedding_bin.clone(),
        config.query_embedding_index.clone(),
    ];
    for m in &config.masks {
        singles.push(m.clone());
        singles.push(m.with_extension("json"));
    }
    for (l, r) in &config.fisheye_pairs {
        for p in [l, r] {
            singles.push(p.clone());
            let mut os = p.as_os_str().to_owned();
            os.push(".json");
            singles.push(PathBuf::from(os));
        }
    }
    for f in &config.frames {
        singles.push(f.background.clone());
    }
    for path in singles {
        manifest
            .input_digests
            .insert(file_name(&path), sha256_file(&path)?);
    }
    let mut library_files = Vec::new();
    walk_sorted(&config.library, &mut library_files)?;
    for path in library_files {
        let rel = path
            .strip_prefix(&config.library)
            .unwrap_or(&path)
            .to_string_lossy()
            .into_owned();
        manifest
            .input_digests
            .insert(format!("library/{rel}"), sha256_file(&path)?);
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn walk_sorted(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            walk_sorted(&entry, out)?;
        } else {
            out.push(entry);
        }
    }
    Ok(())
}
