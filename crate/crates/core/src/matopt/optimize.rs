//! The fitting loop: render the posed mesh with the current material graphs,
//! measure the appearance losses against the reference photo, and push the
//! gradients back through shading, sampling and graph evaluation into the
//! continuous parameters.

use std::collections::BTreeMap;

use crate::assets::TriangleMesh;
use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::matgraph::{MaterialGraph, TextureCotangent, TextureSet};
use crate::math::Rigid;
use crate::render::{rasterize, sample_textures, shade_with_grad, CameraModel, EnvironmentMap};
use crate::retrieval::{ComponentLabel, PartAssignment, SegmentationMask};

use super::losses::{loss_rgb_with_grad, loss_stat_with_grad, loss_vgg_with_grad};
use super::{EpochLosses, LossReport, LossTerms, LossWeights, OptimizeConfig};

/// Adaptive-moment state for one graph's theta vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    fn new(dim: usize) -> Adam {
        Adam {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &OptimizeConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            theta[i] -= cfg.step * mh / (vh.sqrt() + 1e-8);
        }
    }
}

/// Pick the reference mask for a component: highest confidence, then lowest
/// view index.
fn reference_mask(
    masks: &[SegmentationMask],
    label: ComponentLabel,
) -> Option<&SegmentationMask> {
    masks
        .iter()
        .filter(|m| m.label == label.name())
        .max_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| b.view_index.cmp(&a.view_index))
        })
}

/// Fit the continuous parameters of the body and wheel material graphs so the
/// rendered vehicle matches the reference photo. Window graphs are applied
/// unchanged; geometry, pose, roughness and discrete parameters are fixed.
/// Rasterization happens once — the buffers are reused every epoch.
#[allow(clippy::too_many_arguments)]
pub fn optimize_materials(
    mesh: &TriangleMesh,
    model_pose: &Rigid,
    camera: &CameraModel,
    assignment: &PartAssignment,
    graphs: &BTreeMap<ComponentLabel, MaterialGraph>,
    reference: &ImageRgb,
    ref_masks: &[SegmentationMask],
    env: &EnvironmentMap,
    weights: &LossWeights,
    config: &OptimizeConfig,
) -> Result<(BTreeMap<ComponentLabel, MaterialGraph>, LossReport)> {
    weights.validate()?;
    config.validate()?;
    env.validate()?;
    if reference.width != camera.width || reference.height != camera.height {
        return Err(Error::Dimension(format!(
            "reference image {}x{} does not match camera {}x{}",
            reference.width, reference.height, camera.width, camera.height
        )));
    }
    if graphs.is_empty() {
        return Err(Error::Empty("no material graphs to apply".into()));
    }

    let mut report = LossReport::default();
    let buffers = rasterize(mesh, model_pose, camera)?;
    if buffers.covered_pixels() == 0 {
        return Err(Error::Empty(
            "posed mesh covers no pixels; nothing to optimize".into(),
        ));
    }

    // label to render with, per material index seen in the buffers
    let fallback = *graphs.keys().next().unwrap();
    let mut index_label: BTreeMap<u32, ComponentLabel> = BTreeMap::new();
    for (i, &cov) in buffers.coverage.iter().enumerate() {
        if cov {
            let idx = buffers.material[i];
            index_label.entry(idx).or_insert_with(|| {
                let label = assignment.label_of(idx);
                if graphs.contains_key(&label) {
                    label
                } else {
                    report.warnings.push(format!(
                        "material index {idx} ({}) has no graph; rendering it as {}",
                        label.name(),
                        fallback.name()
                    ));
                    fallback
                }
            });
        }
    }

    // components that actually take gradient steps
    let mut optimized: Vec<ComponentLabel> = Vec::new();
    for (label, on) in [
        (ComponentLabel::Body, config.optimize_body),
        (ComponentLabel::Wheels, config.optimize_wheels),
    ] {
        if !on || !graphs.contains_key(&label) {
            continue;
        }
        if !index_label.values().any(|&l| l == label) {
            report
                .warnings
                .push(format!("component {} covers no pixels; skipped", label.name()));
            continue;
        }
        match reference_mask(ref_masks, label) {
            Some(m) if m.area() > 0 => optimized.push(label),
            _ => report.warnings.push(format!(
                "no usable reference mask for {}; component not optimized",
                label.name()
            )),
        }
    }

    // per-component masks on the render, from the raster buffers
    let n_px = buffers.width * buffers.height;
    let cad_mask_of = |label: ComponentLabel| -> SegmentationMask {
        let bits: Vec<bool> = (0..n_px)
            .map(|i| {
                buffers.coverage[i] && index_label.get(&buffers.material[i]) == Some(&label)
            })
            .collect();
        SegmentationMask::new(
            buffers.width,
            buffers.height,
            bits,
            label.name().to_string(),
            1.0,
            0,
        )
        .expect("mask dimensions match buffers")
    };

    // graphs with fixed parameters are evaluated once
    let mut working: BTreeMap<ComponentLabel, MaterialGraph> = graphs.clone();
    let mut fixed_textures: BTreeMap<ComponentLabel, TextureSet> = BTreeMap::new();
    for (label, graph) in &working {
        if !optimized.contains(label) {
            let (tex, _) = graph.evaluate(config.texture_size, config.texture_size)?;
            fixed_textures.insert(*label, tex);
        }
    }

    let mut adam: BTreeMap<ComponentLabel, Adam> = optimized
        .iter()
        .map(|&l| (l, Adam::new(working[&l].get_theta().len())))
        .collect();
    let mut warned_empty_overlap = false;

    for epoch in 0..config.epochs {
        // evaluate the optimized graphs with their pullbacks
        let mut label_textures: BTreeMap<ComponentLabel, TextureSet> = fixed_textures.clone();
        let mut pullbacks = BTreeMap::new();
        for &label in &optimized {
            let (tex, pb, _) =
                working[&label].evaluate_with_grad(config.texture_size, config.texture_size)?;
            label_textures.insert(label, tex);
            pullbacks.insert(label, pb);
        }
        let textures: BTreeMap<u32, TextureSet> = index_label
            .iter()
            .map(|(&idx, label)| (idx, label_textures[label].clone()))
            .collect();

        let (grid, sample_pb) = sample_textures(&buffers, &textures)?;
        let (render, _alpha, shade_pb) = shade_with_grad(&grid, env, camera)?;

        let mut pixel_cot = vec![[0.0; 3]; n_px];
        let mut epoch_terms = LossTerms::default();
        for &label in &optimized {
            let ref_mask = reference_mask(ref_masks, label).expect("checked above");
            let cad_mask = cad_mask_of(label);
            if cad_mask.area() == 0 {
                continue;
            }
            let (l_mean, l_var, g_stat) =
                loss_stat_with_grad(reference, ref_mask, &render, &cad_mask)?;
            let (l_vgg, g_vgg) = loss_vgg_with_grad(reference, ref_mask, &render, &cad_mask)?;
            let overlap_bits: Vec<bool> = ref_mask
                .bits
                .iter()
                .zip(&cad_mask.bits)
                .map(|(&a, &b)| a && b)
                .collect();
            let overlap = SegmentationMask::new(
                cad_mask.width,
                cad_mask.height,
                overlap_bits,
                format!("{}-overlap", label.name()),
                1.0,
                0,
            )?;
            let (l_rgb, empty_overlap, g_rgb) =
                loss_rgb_with_grad(reference, &render, &overlap)?;
            if empty_overlap && !warned_empty_overlap {
                warned_empty_overlap = true;
                report.warnings.push(format!(
                    "empty reference/render overlap for {}; photometric term contributes 0",
                    label.name()
                ));
            }
            epoch_terms.mean += l_mean;
            epoch_terms.var += l_var;
            epoch_terms.vgg += l_vgg;
            epoch_terms.rgb += l_rgb;
            for i in 0..n_px {
                for c in 0..3 {
                    pixel_cot[i][c] += weights.stat * g_stat[i][c]
                        + weights.vgg * g_vgg[i][c]
                        + weights.rgb * g_rgb[i][c];
                }
            }
        }

        let total = epoch_terms.weighted(weights);
        if !epoch_terms.is_finite() {
            return Err(Error::Eval(format!(
                "non-finite loss at epoch {epoch}: mean {} var {} vgg {} rgb {}",
                epoch_terms.mean, epoch_terms.var, epoch_terms.vgg, epoch_terms.rgb
            )));
        }
        report.epochs.push(EpochLosses {
            mean: epoch_terms.mean,
            var: epoch_terms.var,
            vgg: epoch_terms.vgg,
            rgb: epoch_terms.rgb,
            total,
        });

        // backprop: image -> per-pixel albedo -> texels -> theta
        let albedo_cot = shade_pb.pull(&pixel_cot);
        let texel_cot = sample_pb.pull(&albedo_cot);
        for &label in &optimized {
            let graph = working.get_mut(&label).unwrap();
            let mut cot =
                TextureCotangent::zeros(config.texture_size, config.texture_size);
            for (idx, l) in &index_label {
                if *l != label {
                    continue;
                }
                if let Some(g) = texel_cot.get(idx) {
                    for (acc, add) in cot.albedo.iter_mut().zip(g) {
                        for c in 0..3 {
                            acc[c] += add[c];
                        }
                    }
                }
            }
            let mut grad = pullbacks[&label].pull(&cot);
            for (g, opt) in grad.iter_mut().zip(graph.optimizable_mask(false)) {
                if !opt {
                    *g = 0.0;
                }
            }
            let mut theta = graph.get_theta();
            adam.get_mut(&label).unwrap().step(&mut theta, &grad, config);
            graph.set_theta(&theta);
            graph.clamp_theta();
        }
    }

    for (label, graph) in &working {
        report.final_theta.insert(*label, graph.get_theta());
    }
    Ok((working, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Group;
    use crate::matgraph::{builtin_prior, Node, NodeKind, Outputs, PriorKind};
    use crate::math::{vec2, vec3};

    /// Quad at z = 2 facing an identity camera at the origin.
    fn quad_mesh() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                vec3(-0.8, -0.8, 2.0),
                vec3(0.8, -0.8, 2.0),
                vec3(0.8, 0.8, 2.0),
                vec3(-0.8, 0.8, 2.0),
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
                name: "body".into(),
                material_index: 0,
                face_start: 0,
                face_count: 2,
            }],
        }
    }

    fn small_camera() -> CameraModel {
        CameraModel {
            fx: 16.0,
            fy: 16.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
            pose: Rigid::IDENTITY,
        }
    }

    fn uniform_color_graph(rgb: [f64; 3]) -> MaterialGraph {
        let nodes = vec![
            Node::new(
                "color",
                NodeKind::UniformColor,
                &[
                    (rgb[0], 0.0, 1.0),
                    (rgb[1], 0.0, 1.0),
                    (rgb[2], 0.0, 1.0),
                ],
            ),
            Node::new("rough", NodeKind::ScalarConst { fixed: true }, &[(0.6, 0.01, 1.0)]),
        ];
        MaterialGraph::new(
            nodes,
            vec![],
            Outputs {
                albedo: "color".into(),
                normal: None,
                roughness: "rough".into(),
                transmission: None,
                metallic: 0.0,
            },
        )
        .unwrap()
    }

    fn body_assignment() -> PartAssignment {
        let mut a = PartAssignment::default();
        a.entries.insert(
            0,
            crate::retrieval::AssignmentEntry {
                label: ComponentLabel::Body,
                source: Some(crate::retrieval::AssignmentSource::BodyRule),
                iou: None,
            },
        );
        a
    }

    fn render_scene(
        graph: &MaterialGraph,
        env: &EnvironmentMap,
    ) -> (ImageRgb, SegmentationMask) {
        let mesh = quad_mesh();
        let camera = small_camera();
        let buffers = rasterize(&mesh, &Rigid::IDENTITY, &camera).unwrap();
        let (tex, _) = graph.evaluate(16, 16).unwrap();
        let mut textures = BTreeMap::new();
        textures.insert(0u32, tex);
        let (grid, _) = sample_textures(&buffers, &textures).unwrap();
        let (img, _, _) = shade_with_grad(&grid, env, &camera).unwrap();
        let mask = SegmentationMask::new(
            16,
            16,
            buffers.coverage.clone(),
            "body".into(),
            1.0,
            0,
        )
        .unwrap();
        (img, mask)
    }

    fn run(
        graphs: &BTreeMap<ComponentLabel, MaterialGraph>,
        reference: &ImageRgb,
        ref_mask: &SegmentationMask,
        env: &EnvironmentMap,
        config: &OptimizeConfig,
    ) -> (BTreeMap<ComponentLabel, MaterialGraph>, LossReport) {
        optimize_materials(
            &quad_mesh(),
            &Rigid::IDENTITY,
            &small_camera(),
            &body_assignment(),
            graphs,
            reference,
            std::slice::from_ref(ref_mask),
            env,
            &LossWeights::default(),
            config,
        )
        .unwrap()
    }

    #[test]
    fn target_at_initial_theta_is_a_fixed_point() {
        let env = EnvironmentMap::uniform(32, 16, [1.0; 3]);
        let graph = uniform_color_graph([0.3, 0.5, 0.7]);
        let (reference, mask) = render_scene(&graph, &env);
        let mut graphs = BTreeMap::new();
        graphs.insert(ComponentLabel::Body, graph.clone());
        let config = OptimizeConfig {
            epochs: 3,
            texture_size: 16,
            ..OptimizeConfig::default()
        };
        let (out, report) = run(&graphs, &reference, &mask, &env, &config);
        assert!(report.epochs[0].total.abs() < 1e-12, "{}", report.epochs[0].total);
        assert_eq!(out[&ComponentLabel::Body].get_theta(), graph.get_theta());
    }

    #[test]
    fn uniform_color_fits_constant_target() {
        let env = EnvironmentMap::uniform(32, 16, [1.0; 3]);
        let target = uniform_color_graph([0.62, 0.34, 0.18]);
        let (reference, mask) = render_scene(&target, &env);
        let mut graphs = BTreeMap::new();
        graphs.insert(ComponentLabel::Body, uniform_color_graph([0.2, 0.6, 0.5]));
        let config = OptimizeConfig {
            epochs: 300,
            texture_size: 16,
            ..OptimizeConfig::default()
        };
        let (_, report) = run(&graphs, &reference, &mask, &env, &config);
        let last = report.epochs.last().unwrap();
        assert!(last.rgb < 1e-3, "final photometric loss {}", last.rgb);
    }

    #[test]
    fn window_graph_is_untouched_and_theta_stays_in_bounds() {
        let env = EnvironmentMap::uniform(32, 16, [1.0; 3]);
        let target = uniform_color_graph([0.9, 0.1, 0.1]);
        let (reference, mask) = render_scene(&target, &env);
        let window = builtin_prior(PriorKind::Window);
        let body = builtin_prior(PriorKind::BodyPainted);
        let mut graphs = BTreeMap::new();
        graphs.insert(ComponentLabel::Body, body.clone());
        graphs.insert(ComponentLabel::Windows, window.clone());
        let config = OptimizeConfig {
            epochs: 20,
            texture_size: 16,
            ..OptimizeConfig::default()
        };
        let (out, _) = run(&graphs, &reference, &mask, &env, &config);
        assert_eq!(
            out[&ComponentLabel::Windows].get_theta(),
            window.get_theta(),
            "window parameters moved"
        );
        assert_ne!(out[&ComponentLabel::Body].get_theta(), body.get_theta());
        let theta = out[&ComponentLabel::Body].get_theta();
        for (v, r) in theta.iter().zip(out[&ComponentLabel::Body].theta_layout()) {
            assert!(*v >= r.lo - 1e-12 && *v <= r.hi + 1e-12, "{} out of bounds", r.name);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let env = EnvironmentMap::uniform(32, 16, [0.8; 3]);
        let target = uniform_color_graph([0.7, 0.2, 0.4]);
        let (reference, mask) = render_scene(&target, &env);
        let mut graphs = BTreeMap::new();
        graphs.insert(ComponentLabel::Body, builtin_prior(PriorKind::BodyPainted));
        let config = OptimizeConfig {
            epochs: 10,
            texture_size: 16,
            ..OptimizeConfig::default()
        };
        let (out_a, rep_a) = run(&graphs, &reference, &mask, &env, &config);
        let (out_b, rep_b) = run(&graphs, &reference, &mask, &env, &config);
        assert_eq!(
            out_a[&ComponentLabel::Body].get_theta(),
            out_b[&ComponentLabel::Body].get_theta()
        );
        let ser = |r: &LossReport| serde_json::to_string(r).unwrap();
        assert_eq!(ser(&rep_a), ser(&rep_b));
    }
}
