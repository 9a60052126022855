//! End-to-end gradient verification: analytic d(total loss)/dθ through the
//! full graph → texture → sampling → shading → loss chain, compared against
//! central finite differences on a small single-quad scene.

use std::collections::BTreeMap;

use crate::assets::{Group, TriangleMesh};
use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::matgraph::{MaterialGraph, TextureCotangent, TextureSet};
use crate::math::{vec2, vec3, Rigid};
use crate::render::{rasterize, sample_textures, shade, shade_with_grad, CameraModel, EnvironmentMap};
use crate::retrieval::SegmentationMask;

use super::losses::{loss_rgb_with_grad, loss_stat_with_grad, loss_vgg_with_grad};
use super::LossWeights;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Continuous parameters that were checked (optimizable only).
    pub params_checked: usize,
    pub max_rel_error: f64,
    /// Parameter index of the worst disagreement, when any was checked.
    pub worst_param: Option<usize>,
}

/// Camera-filling quad at z = 2 with a single material.
fn quad_scene(image_size: usize) -> (TriangleMesh, CameraModel) {
    let mesh = TriangleMesh {
        vertices: vec![
            vec3(-2.0, -2.0, 2.0),
            vec3(2.0, -2.0, 2.0),
            vec3(2.0, 2.0, 2.0),
            vec3(-2.0, 2.0, 2.0),
        ],
        normals: vec![vec3(0.0, 0.0, -1.0)],
        uvs: vec![
            vec2(0.0, 0.0),
            vec2(1.0, 0.0),
            vec2(1.0, 1.0),
            vec2(0.0, 1.0),
        ],
        triangles: vec![
            [[0, 0, 0], [1, 0, 1], [2, 0, 2]],
            [[0, 0, 0], [2, 0, 2], [3, 0, 3]],
        ],
        groups: vec![Group {
            name: "quad".into(),
            material_index: 0,
            face_start: 0,
            face_count: 2,
        }],
    };
    let s = image_size as f64;
    let camera = CameraModel {
        fx: s / 2.0,
        fy: s / 2.0,
        cx: s / 2.0,
        cy: s / 2.0,
        width: image_size,
        height: image_size,
        pose: Rigid::IDENTITY,
    };
    (mesh, camera)
}

/// Smoothly varying environment so specular terms see structure.
fn check_env() -> EnvironmentMap {
    let mut env = EnvironmentMap::uniform(8, 4, [0.0; 3]);
    for row in 0..4 {
        for col in 0..8 {
            env.radiance.set(
                col,
                row,
                [
                    0.4 + 0.4 * col as f64 / 7.0,
                    0.6,
                    0.9 - 0.5 * row as f64 / 3.0,
                ],
            );
        }
    }
    env
}

fn check_reference(size: usize) -> ImageRgb {
    let mut img = ImageRgb::new(size, size);
    for y in 0..size {
        for x in 0..size {
            img.set(
                x,
                y,
                [
                    0.2 + 0.5 * x as f64 / (size - 1) as f64,
                    0.45,
                    0.7 - 0.4 * y as f64 / (size - 1) as f64,
                ],
            );
        }
    }
    img
}

fn full_mask(size: usize) -> SegmentationMask {
    SegmentationMask::new(size, size, vec![true; size * size], "body".into(), 1.0, 0)
        .expect("static mask")
}

/// Weighted total loss of `graph` rendered on the check scene. Gradients flow
/// through the albedo map only, so the normal, roughness and transmission maps
/// are frozen at `frozen` while differencing; the finite-difference quotient
/// then approximates exactly the derivative the optimizer steps along.
#[allow(clippy::too_many_arguments)]
fn total_loss(
    graph: &MaterialGraph,
    texture_size: usize,
    frozen: &TextureSet,
    buffers: &crate::render::RenderBuffers,
    camera: &CameraModel,
    env: &EnvironmentMap,
    reference: &ImageRgb,
    mask: &SegmentationMask,
    weights: &LossWeights,
) -> Result<f64> {
    let (mut tex, _) = graph.evaluate(texture_size, texture_size)?;
    tex.normal.clone_from(&frozen.normal);
    tex.roughness.clone_from(&frozen.roughness);
    tex.transmission.clone_from(&frozen.transmission);
    let textures: BTreeMap<u32, TextureSet> = [(0u32, tex)].into();
    let (grid, _) = sample_textures(buffers, &textures)?;
    let (render, _alpha) = shade(&grid, env, camera)?;
    let (l_mean, l_var, _) = loss_stat_with_grad(reference, mask, &render, mask)?;
    let (l_vgg, _) = loss_vgg_with_grad(reference, mask, &render, mask)?;
    let (l_rgb, _, _) = loss_rgb_with_grad(reference, &render, mask)?;
    Ok(weights.stat * (l_mean + l_var) + weights.vgg * l_vgg + weights.rgb * l_rgb)
}

/// Verify the analytic gradient of the total loss against central finite
/// differences for every optimizable parameter of `graph`. Parameters pinned
/// by policy (roughness path, fixed constants) are skipped, matching what
/// the optimizer steps.
pub fn gradient_check(
    graph: &MaterialGraph,
    texture_size: usize,
    image_size: usize,
) -> Result<GradCheckReport> {
    if image_size < 4 {
        return Err(Error::Invalid("gradient check image too small".into()));
    }
    let (mesh, camera) = quad_scene(image_size);
    let env = check_env();
    let reference = check_reference(image_size);
    let mask = full_mask(image_size);
    let weights = LossWeights::default();
    let buffers = rasterize(&mesh, &Rigid::IDENTITY, &camera)?;

    // analytic gradient via the pullback chain
    let (tex, pullback, _) = graph.evaluate_with_grad(texture_size, texture_size)?;
    let frozen = tex.clone();
    let textures: BTreeMap<u32, TextureSet> = [(0u32, tex)].into();
    let (grid, sample_pb) = sample_textures(&buffers, &textures)?;
    let (render, _alpha, shade_pb) = shade_with_grad(&grid, &env, &camera)?;
    let (_, _, g_stat) = loss_stat_with_grad(&reference, &mask, &render, &mask)?;
    let (_, g_vgg) = loss_vgg_with_grad(&reference, &mask, &render, &mask)?;
    let (_, _, g_rgb) = loss_rgb_with_grad(&reference, &render, &mask)?;
    let n_px = image_size * image_size;
    let mut pixel_cot = vec![[0.0; 3]; n_px];
    for i in 0..n_px {
        for c in 0..3 {
            pixel_cot[i][c] =
                weights.stat * g_stat[i][c] + weights.vgg * g_vgg[i][c] + weights.rgb * g_rgb[i][c];
        }
    }
    let albedo_cot = shade_pb.pull(&pixel_cot);
    let texel_cot = sample_pb.pull(&albedo_cot);
    let mut cot = TextureCotangent::zeros(texture_size, texture_size);
    if let Some(g) = texel_cot.get(&0) {
        cot.albedo.clone_from(g);
    }
    let analytic = pullback.pull(&cot);

    let layout = graph.theta_layout();
    let optimizable = graph.optimizable_mask(false);
    let theta = graph.get_theta();

    let mut report = GradCheckReport {
        params_checked: 0,
        max_rel_error: 0.0,
        worst_param: None,
    };
    for i in 0..theta.len() {
        if !optimizable[i] {
            continue;
        }
        // keep both evaluation points inside the parameter's bounds
        let p = &layout[i];
        let h = 1e-4f64.min((p.hi - theta[i]) / 2.0).min((theta[i] - p.lo) / 2.0);
        if h <= 0.0 {
            continue; // pinned at a bound; the optimizer clamps it anyway
        }
        let mut plus = graph.clone();
        let mut t = theta.clone();
        t[i] += h;
        plus.set_theta(&t);
        let mut minus = graph.clone();
        t[i] = theta[i] - h;
        minus.set_theta(&t);
        let l_plus = total_loss(&plus, texture_size, &frozen, &buffers, &camera, &env, &reference, &mask, &weights)?;
        let l_minus = total_loss(&minus, texture_size, &frozen, &buffers, &camera, &env, &reference, &mask, &weights)?;
        let fd = (l_plus - l_minus) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-3);
        let rel = (analytic[i] - fd).abs() / denom;
        report.params_checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = Some(i);
        }
    }
    Ok(report)
}
