//! Property tests for retrieval: brute-force oracles for embedding search and
//! IOU classification, plus order-invariance of pose matching.

use std::collections::BTreeMap;

use carforge::assets::{CadAsset, EmbeddingVector, Library, TriangleMesh};
use carforge::img::Planes;
use carforge::retrieval::{
    classify_materials, match_pose, retrieve_cad, ClassifyOptions, ComponentLabel, FeatureMap,
    FeatureSource, MaterialIndexMap, SegmentationMask, BACKGROUND,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_mesh() -> TriangleMesh {
    use carforge::assets::Group;
    use carforge::math::{vec2, vec3};
    TriangleMesh {
        vertices: vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
        normals: vec![vec3(0.0, 0.0, 1.0)],
        uvs: vec![vec2(0.0, 0.0), vec2(1.0, 0.0), vec2(0.0, 1.0)],
        triangles: vec![[[0, 0, 0], [1, 0, 1], [2, 0, 2]]],
        groups: vec![Group {
            name: "g".into(),
            material_index: 0,
            face_start: 0,
            face_count: 1,
        }],
    }
}

fn library_of(vectors: Vec<(String, Vec<f64>)>) -> Library {
    let mut embeddings = BTreeMap::new();
    let mut assets = Vec::new();
    for (id, values) in vectors {
        let eid = format!("e_{id}");
        embeddings.insert(
            eid.clone(),
            EmbeddingVector::normalized(eid.clone(), values).unwrap(),
        );
        assets.push(CadAsset {
            id,
            mesh: unit_mesh(),
            embedding_id: eid,
            qualified: true,
        });
    }
    Library {
        assets,
        embeddings,
        material_priors: BTreeMap::new(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return v;
        }
    }
}

/// Brute-force top-1 on 200 random embeddings matches retrieve_cad, and the
/// winner is invariant to positive rescaling of the query.
#[test]
fn retrieval_matches_brute_force_scan() {
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let dim = 16;
        let vectors: Vec<(String, Vec<f64>)> = (0..200)
            .map(|i| (format!("asset_{i:03}"), random_unit(&mut rng, dim)))
            .collect();
        let lib = library_of(vectors.clone());

        // plant a near-duplicate of one library vector
        let target = rng.gen_range(0..vectors.len());
        let mut qv = vectors[target].1.clone();
        for v in &mut qv {
            *v += rng.gen_range(-1e-3..1e-3);
        }
        let q = EmbeddingVector::normalized("q".into(), qv.clone()).unwrap();
        let top = retrieve_cad(&q, &lib, 1).unwrap();

        // oracle: exhaustive cosine scan
        let brute = lib
            .assets
            .iter()
            .map(|a| (a.id.clone(), q.dot(lib.embedding_of(a))))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .unwrap();
        assert_eq!(top[0].0, brute.0, "trial {trial}");
        assert_eq!(top[0].0, format!("asset_{target:03}"), "trial {trial}");

        // positive-scale invariance
        let scale = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = qv.iter().map(|v| v * scale).collect();
        let qs = EmbeddingVector::normalized("qs".into(), scaled).unwrap();
        let top_s = retrieve_cad(&qs, &lib, 1).unwrap();
        assert_eq!(top_s[0].0, top[0].0, "trial {trial} scale {scale}");
    }
}

#[test]
fn retrieval_ranking_is_storage_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let vectors: Vec<(String, Vec<f64>)> = (0..40)
        .map(|i| (format!("a{i:02}"), random_unit(&mut rng, 8)))
        .collect();
    let mut reversed = vectors.clone();
    reversed.reverse();
    let q = EmbeddingVector::normalized("q".into(), random_unit(&mut rng, 8)).unwrap();
    let fwd = retrieve_cad(&q, &library_of(vectors), 40).unwrap();
    let rev = retrieve_cad(&q, &library_of(reversed), 40).unwrap();
    assert_eq!(fwd, rev);
}

/// Independent oracle: straight per-index pixel counting, no shared code with
/// the implementation's active-set bookkeeping.
fn oracle_whole_mask_iou(map: &MaterialIndexMap, mask: &SegmentationMask) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    let indices: std::collections::BTreeSet<u32> = map
        .indices
        .iter()
        .copied()
        .filter(|&i| i != BACKGROUND)
        .collect();
    for idx in indices {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (p, &m) in map.indices.iter().zip(&mask.bits) {
            let in_idx = *p == idx;
            if in_idx && m {
                inter += 1;
            }
            if in_idx || m {
                union += 1;
            }
        }
        if inter > 0 {
            out.insert(idx, inter as f64 / union as f64);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_matches_pixel_count_oracle(
        seed in 0u64..10_000,
        w in 4usize..=32,
        h in 4usize..=32,
        n_indices in 1u32..=4,
        threshold in 0.05f64..0.95,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = MaterialIndexMap::new(w, h, 0);
        for i in 0..w * h {
            map.indices[i] = if rng.gen_bool(0.2) {
                BACKGROUND
            } else {
                rng.gen_range(0..n_indices)
            };
        }
        let bits: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
        let mask = SegmentationMask::new(w, h, bits, "windows".into(), 0.8, 0).unwrap();

        let got = classify_materials(&[map.clone()], &[mask.clone()], threshold,
            ClassifyOptions::default()).unwrap();

        let ious = oracle_whole_mask_iou(&map, &mask);
        for (&idx, _) in map.areas().iter() {
            let expect_assigned = ious.get(&idx).is_some_and(|&iou| iou > threshold);
            let got_label = got.label_of(idx);
            prop_assert_eq!(
                got_label == ComponentLabel::Windows,
                expect_assigned,
                "idx {} iou {:?} threshold {}", idx, ious.get(&idx), threshold
            );
        }
    }

    #[test]
    fn pose_match_consistent_under_rotation(
        seed in 0u64..10_000,
        m in 1usize..12,
        rot in 0usize..12,
    ) {
        let rot = rot % m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<FeatureMap> = (0..m)
            .map(|_| FeatureMap {
                planes: Planes {
                    width: 3,
                    height: 3,
                    channels: 2,
                    data: (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                },
                source: FeatureSource::Ingested,
            })
            .collect();
        let r = FeatureMap {
            planes: Planes {
                width: 3,
                height: 3,
                channels: 2,
                data: (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            },
            source: FeatureSource::Ingested,
        };
        let base = match_pose(&r, &views).unwrap();
        let mut rotated = views.clone();
        rotated.rotate_left(rot);
        let rotated_best = match_pose(&r, &rotated).unwrap();
        // distances are continuous random values: ties have probability 0
        prop_assert_eq!((rotated_best + rot) % m, base);
    }
}

/// Synthetic stand-in for "render at each azimuth and match": descriptors are
/// smooth functions of azimuth, the reference sits at 90°, and a 5° grid must
/// return a view within one bucket of 90°.
#[test]
fn pose_grid_recovers_known_azimuth() {
    let feat_at = |az_deg: f64| {
        let a = az_deg.to_radians();
        let mut planes = Planes::new(4, 1, 2);
        for x in 0..4 {
            planes.set(0, x, 0, (a + x as f64).sin());
            planes.set(1, x, 0, (a * 2.0 + x as f64).cos());
        }
        FeatureMap {
            planes,
            source: FeatureSource::Ingested,
        }
    };
    let step = 5.0;
    let views: Vec<FeatureMap> = (0..72).map(|j| feat_at(j as f64 * step)).collect();
    let best = match_pose(&feat_at(90.0), &views).unwrap();
    let err = (best as f64 * step - 90.0).abs();
    assert!(err <= step, "matched azimuth off by {err} degrees");
}
