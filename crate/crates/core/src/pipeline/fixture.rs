//! Self-contained synthetic end-to-end fixture: a two-asset CAD library, a
//! rendered reference photograph with component masks, a fisheye capture
//! pair, one background frame and a ready-to-run config. Everything is
//! produced by the same primitives the pipeline uses, so a run against the
//! fixture exercises every stage with consistent inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::assets::{
    write_embeddings, write_mesh_json, Group, LibraryManifest, ManifestAsset, TriangleMesh,
};
use crate::error::{Error, Result};
use crate::image_io;
use crate::img::{ImageGray, ImageRgb};
use crate::lighting::{render_fisheye, write_fisheye};
use crate::math::{vec2, vec3, Mat3, Quat, Rigid, Vec3};
use crate::matgraph::TextureSet;
use crate::matopt::OptimizeConfig;
use crate::render::{composite, rasterize, sample_textures, shade, EnvironmentMap};
use crate::retrieval::{retrieve_material_prior, write_mask, SegmentationMask};

use super::config::{CameraSpec, FrameSpec, PipelineConfig, PoseSpec};

/// Everything a test needs to drive the fixture.
pub struct Fixture {
    pub config_path: PathBuf,
    pub config: PipelineConfig,
    /// Yaw (degrees) the reference image was rendered at; lies on the grid.
    pub reference_yaw_degrees: f64,
}

/// Quad-based mesh assembly with one shared uv square.
struct MeshBuilder {
    vertices: Vec<Vec3>,
    normals: Vec<Vec3>,
    triangles: Vec<[[u32; 3]; 3]>,
    groups: Vec<Group>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder {
            vertices: Vec::new(),
            normals: Vec::new(),
            triangles: Vec::new(),
            groups: Vec::new(),
        }
    }

    fn quad(&mut self, corners: [Vec3; 4], normal: Vec3) {
        let v = self.vertices.len() as u32;
        self.vertices.extend(corners);
        let n = self.normals.len() as u32;
        self.normals.push(normal);
        self.triangles.push([[v, n, 0], [v + 1, n, 1], [v + 2, n, 2]]);
        self.triangles.push([[v, n, 0], [v + 2, n, 2], [v + 3, n, 3]]);
    }

    fn close_group(&mut self, name: &str, material_index: u32) {
        let done: usize = self.groups.iter().map(|g| g.face_count).sum();
        self.groups.push(Group {
            name: name.to_string(),
            material_index,
            face_start: done,
            face_count: self.triangles.len() - done,
        });
    }

    fn build(self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices,
            normals: self.normals,
            uvs: vec![
                vec2(0.0, 0.0),
                vec2(1.0, 0.0),
                vec2(1.0, 1.0),
                vec2(0.0, 1.0),
            ],
            triangles: self.triangles,
            groups: self.groups,
        }
    }
}

/// Toy vehicle: a z-up cuboid body (material 0), a side window panel (1),
/// four wheel quads (2) and a small trim strip (3) left for the body rule.
pub fn car_mesh() -> TriangleMesh {
    let mut b = MeshBuilder::new();
    let (x0, x1) = (-1.0, 1.0);
    let (y0, y1) = (-0.5, 0.5);
    let (z0, z1) = (0.25, 1.0);
    // body: all six cuboid faces
    b.quad(
        [vec3(x1, y0, z0), vec3(x1, y1, z0), vec3(x1, y1, z1), vec3(x1, y0, z1)],
        vec3(1.0, 0.0, 0.0),
    );
    b.quad(
        [vec3(x0, y0, z0), vec3(x0, y0, z1), vec3(x0, y1, z1), vec3(x0, y1, z0)],
        vec3(-1.0, 0.0, 0.0),
    );
    b.quad(
        [vec3(x0, y1, z0), vec3(x0, y1, z1), vec3(x1, y1, z1), vec3(x1, y1, z0)],
        vec3(0.0, 1.0, 0.0),
    );
    b.quad(
        [vec3(x0, y0, z0), vec3(x1, y0, z0), vec3(x1, y0, z1), vec3(x0, y0, z1)],
        vec3(0.0, -1.0, 0.0),
    );
    b.quad(
        [vec3(x0, y0, z1), vec3(x1, y0, z1), vec3(x1, y1, z1), vec3(x0, y1, z1)],
        vec3(0.0, 0.0, 1.0),
    );
    b.quad(
        [vec3(x0, y0, z0), vec3(x0, y1, z0), vec3(x1, y1, z0), vec3(x1, y0, z0)],
        vec3(0.0, 0.0, -1.0),
    );
    b.close_group("body", 0);
    // window panel just off the +x face
    b.quad(
        [
            vec3(1.01, -0.35, 0.55),
            vec3(1.01, 0.35, 0.55),
            vec3(1.01, 0.35, 0.95),
            vec3(1.01, -0.35, 0.95),
        ],
        vec3(1.0, 0.0, 0.0),
    );
    b.close_group("window", 1);
    // four wheels just off the ±y faces
    for (y, ny) in [(0.51, 1.0), (-0.51, -1.0)] {
        for xc in [-0.6, 0.6] {
            b.quad(
                [
                    vec3(xc - 0.2, y, 0.0),
                    vec3(xc + 0.2, y, 0.0),
                    vec3(xc + 0.2, y, 0.5),
                    vec3(xc - 0.2, y, 0.5),
                ],
                vec3(0.0, ny, 0.0),
            );
        }
    }
    b.close_group("wheels", 2);
    // trim strip, intentionally not covered by any mask
    b.quad(
        [
            vec3(1.01, -0.1, 0.3),
            vec3(1.01, 0.1, 0.3),
            vec3(1.01, 0.1, 0.45),
            vec3(1.01, -0.1, 0.45),
        ],
        vec3(1.0, 0.0, 0.0),
    );
    b.close_group("trim", 3);
    b.build()
}

/// Single-material slab; fails the two-material qualification filter.
fn blob_mesh() -> TriangleMesh {
    let mut b = MeshBuilder::new();
    b.quad(
        [
            vec3(-1.0, -1.0, 0.0),
            vec3(1.0, -1.0, 0.0),
            vec3(1.0, 1.0, 0.0),
            vec3(-1.0, 1.0, 0.0),
        ],
        vec3(0.0, 0.0, 1.0),
    );
    b.close_group("slab", 0);
    b.build()
}

/// Reference/frame camera: at (4, 0, 0.6) looking down the −x axis, +z up in
/// the world mapping to up in the image.
fn fixture_camera() -> CameraSpec {
    let rotation = Mat3::from_rows(
        vec3(0.0, 1.0, 0.0),
        vec3(0.0, 0.0, -1.0),
        vec3(-1.0, 0.0, 0.0),
    );
    let position = vec3(4.0, 0.0, 0.6);
    let translation = rotation.mul_vec(position) * -1.0;
    CameraSpec {
        fx: 60.0,
        fy: 60.0,
        cx: 32.0,
        cy: 24.0,
        width: 64,
        height: 48,
        pose: PoseSpec {
            rotation: Quat::from_matrix(&rotation),
            translation,
        },
    }
}

fn fisheye_rigs() -> (Mat3, Mat3) {
    let left = Mat3::from_cols(
        vec3(0.0, -1.0, 0.0),
        vec3(0.0, 0.0, -1.0),
        vec3(1.0, 0.0, 0.0),
    );
    let right = Mat3::from_cols(
        vec3(0.0, 1.0, 0.0),
        vec3(0.0, 0.0, -1.0),
        vec3(-1.0, 0.0, 0.0),
    );
    (left, right)
}

/// Smooth outdoor-ish sphere coloring for the fisheye captures.
fn sky_shade(d: Vec3) -> [f64; 3] {
    if d.z >= 0.0 {
        [0.45 + 0.25 * d.z, 0.55 + 0.25 * d.z, 0.75]
    } else {
        [0.22, 0.2, 0.18]
    }
}

/// Render the reference photograph: the car at `yaw` degrees under uniform
/// light, composited over a flat gray backdrop and quantized to PNG.
fn render_reference(
    mesh: &TriangleMesh,
    camera: &CameraSpec,
    yaw_degrees: f64,
    texture_size: usize,
) -> Result<(ImageRgb, Vec<SegmentationMask>)> {
    let cam = camera.to_camera();
    let pose = Rigid::new(Mat3::rot_z(yaw_degrees.to_radians()), Vec3::ZERO);
    let buffers = rasterize(mesh, &pose, &cam)?;

    let mut textures: BTreeMap<u32, TextureSet> = BTreeMap::new();
    for (index, label) in [(0u32, "body"), (1, "windows"), (2, "wheels"), (3, "body")] {
        let graph = retrieve_material_prior(label, true)?;
        let (tex, _) = graph.evaluate(texture_size, texture_size)?;
        textures.insert(index, tex);
    }
    let (grid, _) = sample_textures(&buffers, &textures)?;
    let env = EnvironmentMap::uniform(32, 16, [1.0; 3]);
    let (fg, alpha) = shade(&grid, &env, &cam)?;
    let backdrop = ImageRgb::filled(cam.width, cam.height, [0.4; 3]);
    let mut no_shadow = ImageGray::new(cam.width, cam.height);
    no_shadow.data.iter_mut().for_each(|v| *v = 1.0);
    let reference = composite(&fg, &alpha, &no_shadow, &backdrop, 1.0, 2.2)?;

    let mut masks = Vec::new();
    for (index, label) in [(0u32, "body"), (1, "windows"), (2, "wheels")] {
        let bits: Vec<bool> = (0..buffers.coverage.len())
            .map(|i| buffers.coverage[i] && buffers.material[i] == index)
            .collect();
        masks.push(SegmentationMask::new(
            cam.width,
            cam.height,
            bits,
            label.to_string(),
            1.0,
            0,
        )?);
    }
    Ok((reference, masks))
}

/// Write the whole fixture under `root` and return the run-ready config.
pub fn write_fixture(root: &Path) -> Result<Fixture> {
    let lib_dir = root.join("library");
    let input_dir = root.join("inputs");
    let out_dir = root.join("out");
    for d in [&lib_dir, &input_dir, &out_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    // --- CAD library: the car plus an unqualified distractor ---
    write_mesh_json(&lib_dir.join("car.json"), &car_mesh())?;
    write_mesh_json(&lib_dir.join("blob.json"), &blob_mesh())?;
    write_embeddings(
        &lib_dir.join("embeddings.bin"),
        &lib_dir.join("embeddings.json"),
        &[
            ("car".to_string(), vec![1.0, 0.0, 0.0, 0.0]),
            ("blob".to_string(), vec![0.0, 1.0, 0.0, 0.0]),
        ],
    )?;
    let manifest = LibraryManifest {
        assets: vec![
            ManifestAsset {
                id: "car".into(),
                mesh_path: "car.json".into(),
                embedding_id: "car".into(),
                qualified: None,
            },
            ManifestAsset {
                id: "blob".into(),
                mesh_path: "blob.json".into(),
                embedding_id: "blob".into(),
                qualified: None,
            },
        ],
        material_priors: BTreeMap::new(),
        embeddings_bin: "embeddings.bin".into(),
        embeddings_index: "embeddings.json".into(),
    };
    let manifest_path = lib_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::parse(&manifest_path, "manifest", e.to_string()))?,
    )
    .map_err(|e| Error::io(&manifest_path, e))?;

    // --- query embedding: close to the car, far from the blob ---
    write_embeddings(
        &input_dir.join("query.bin"),
        &input_dir.join("query.json"),
        &[("query".to_string(), vec![0.95, 0.05, 0.0, 0.0])],
    )?;

    // --- reference photograph + masks ---
    let camera = fixture_camera();
    let reference_yaw_degrees = 45.0;
    let texture_size = 16;
    let (reference, masks) = render_reference(&car_mesh(), &camera, reference_yaw_degrees, texture_size)?;
    image_io::write_png(&input_dir.join("reference.png"), &reference)?;
    for mask in &masks {
        write_mask(&input_dir.join(format!("mask_{}.png", mask.label)), mask)?;
    }

    // --- fisheye pair ---
    let (left_rig, right_rig) = fisheye_rigs();
    let fov = 200f64.to_radians();
    let left = render_fisheye(96, fov, left_rig, vec3(0.0, 0.3, 1.2), sky_shade);
    let right = render_fisheye(96, fov, right_rig, vec3(0.0, -0.3, 1.2), sky_shade);
    write_fisheye(&input_dir.join("fisheye_left.png"), &left)?;
    write_fisheye(&input_dir.join("fisheye_right.png"), &right)?;

    // --- background frame ---
    let mut background = ImageRgb::new(64, 48);
    for y in 0..48 {
        for x in 0..64 {
            background.set(
                x,
                y,
                [
                    0.2 + 0.5 * x as f64 / 63.0,
                    0.3,
                    0.5 - 0.3 * y as f64 / 47.0,
                ],
            );
        }
    }
    image_io::write_png(&input_dir.join("background.png"), &background)?;

    let config = PipelineConfig {
        library: lib_dir,
        reference_image: input_dir.join("reference.png"),
        reference_camera: camera.clone(),
        reference_insertion: PoseSpec::default(),
        masks: masks
            .iter()
            .map(|m| input_dir.join(format!("mask_{}.png", m.label)))
            .collect(),
        query_embedding_bin: input_dir.join("query.bin"),
        query_embedding_index: input_dir.join("query.json"),
        query_id: Some("query".into()),
        fisheye_pairs: vec![(
            input_dir.join("fisheye_left.png"),
            input_dir.join("fisheye_right.png"),
        )],
        frames: vec![FrameSpec {
            background: input_dir.join("background.png"),
            camera,
            insertion: PoseSpec {
                rotation: Quat::from_matrix(&Mat3::rot_z(30f64.to_radians())),
                translation: Vec3::ZERO,
            },
        }],
        output_dir: out_dir,
        weights: Default::default(),
        optimize: OptimizeConfig {
            epochs: 6,
            texture_size,
            ..OptimizeConfig::default()
        },
        pose_grid_degrees: 45,
        iou_threshold: 0.5,
        sky: Default::default(),
        body_painted: true,
        merge_leftover: false,
        seed: 0,
        exposure: 1.0,
        gamma: 2.2,
        pano_height: 16,
    };

    let config_path = root.join("config.json");
    let mut text = serde_json::to_string_pretty(&config)
        .map_err(|e| Error::parse(&config_path, "config", e.to_string()))?;
    text.push('\n');
    std::fs::write(&config_path, text).map_err(|e| Error::io(&config_path, e))?;

    Ok(Fixture {
        config_path,
        config,
        reference_yaw_degrees,
    })
}
