//! Z-buffered perspective rasterization with perspective-correct attribute
//! interpolation. All arithmetic is f64 and pixels are processed in a fixed
//! order, so output is bit-reproducible.

use crate::assets::TriangleMesh;
use crate::error::Result;
use crate::math::{Rigid, Vec3};

use super::{CameraModel, RenderBuffers};

/// Counts of triangles that produced no fragments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterDiagnostics {
    /// Zero screen-space area.
    pub degenerate_triangles: usize,
    /// At least one vertex at or behind the near plane; skipped whole.
    pub clipped_triangles: usize,
}

const NEAR: f64 = 1e-6;

/// Rasterize `mesh` posed by `model_pose` (model → world) into per-pixel
/// geometry buffers. Pixel centers sit at (x + 0.5, y + 0.5); a pixel is
/// covered when all three barycentric coordinates are ≥ 0.
pub fn rasterize(
    mesh: &TriangleMesh,
    model_pose: &Rigid,
    camera: &CameraModel,
) -> Result<RenderBuffers> {
    camera.validate()?;
    mesh.validate()?;
    let (w, h) = (camera.width, camera.height);
    let n = w * h;
    let mut buffers = RenderBuffers {
        width: w,
        height: h,
        uv: vec![[0.0; 2]; n],
        material: vec![0; n],
        normal: vec![Vec3::ZERO; n],
        position: vec![Vec3::ZERO; n],
        depth: vec![f64::INFINITY; n],
        coverage: vec![false; n],
        diagnostics: RasterDiagnostics::default(),
    };

    let world_rot = model_pose;
    for (fi, tri) in mesh.triangles.iter().enumerate() {
        let material = mesh.face_material(fi).unwrap_or(0);
        let mut p_world = [Vec3::ZERO; 3];
        let mut p_cam = [Vec3::ZERO; 3];
        let mut n_world = [Vec3::ZERO; 3];
        let mut uv = [[0.0f64; 2]; 3];
        for k in 0..3 {
            let [vi, ni, ti] = tri[k];
            p_world[k] = model_pose.apply(mesh.vertices[vi as usize]);
            p_cam[k] = camera.pose.apply(p_world[k]);
            n_world[k] = world_rot.apply_dir(mesh.normals[ni as usize]);
            let t = mesh.uvs[ti as usize];
            uv[k] = [t.x, t.y];
        }
        if p_cam.iter().any(|p| p.z <= NEAR) {
            buffers.diagnostics.clipped_triangles += 1;
            continue;
        }
        let scr: Vec<[f64; 2]> = p_cam
            .iter()
            .map(|p| {
                [
                    camera.fx * p.x / p.z + camera.cx,
                    camera.fy * p.y / p.z + camera.cy,
                ]
            })
            .collect();
        let area = edge(&scr[0], &scr[1], &scr[2]);
        if area == 0.0 {
            buffers.diagnostics.degenerate_triangles += 1;
            continue;
        }

        let min_x = scr.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = scr.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = scr.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = scr.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let x1 = ((max_x - 0.5).ceil() as isize).clamp(0, w as isize - 1) as usize;
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        let y1 = ((max_y - 0.5).ceil() as isize).clamp(0, h as isize - 1) as usize;
        if min_x > w as f64 || max_x < 0.0 || min_y > h as f64 || max_y < 0.0 {
            continue;
        }

        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let l0 = edge(&scr[1], &scr[2], &p) / area;
                let l1 = edge(&scr[2], &scr[0], &p) / area;
                let l2 = edge(&scr[0], &scr[1], &p) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                // perspective-correct interpolation via 1/z
                let inv_z = l0 / p_cam[0].z + l1 / p_cam[1].z + l2 / p_cam[2].z;
                let depth = 1.0 / inv_z;
                let i = py * w + px;
                if depth >= buffers.depth[i] {
                    continue;
                }
                let w0 = l0 / p_cam[0].z * depth;
                let w1 = l1 / p_cam[1].z * depth;
                let w2 = l2 / p_cam[2].z * depth;
                buffers.depth[i] = depth;
                buffers.coverage[i] = true;
                buffers.material[i] = material;
                buffers.uv[i] = [
                    w0 * uv[0][0] + w1 * uv[1][0] + w2 * uv[2][0],
                    w0 * uv[0][1] + w1 * uv[1][1] + w2 * uv[2][1],
                ];
                buffers.normal[i] =
                    (n_world[0] * w0 + n_world[1] * w1 + n_world[2] * w2).normalized();
                buffers.position[i] = p_world[0] * w0 + p_world[1] * w1 + p_world[2] * w2;
            }
        }
    }
    Ok(buffers)
}

/// Signed parallelogram area of (b − a) × (c − a).
#[inline]
fn edge(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Group;
    use crate::math::{vec2, vec3};

    fn camera_64() -> CameraModel {
        CameraModel {
            fx: 64.0,
            fy: 64.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            pose: Rigid::IDENTITY,
        }
    }

    fn tri_mesh(vertices: Vec<Vec3>, uvs: Vec<[f64; 2]>) -> TriangleMesh {
        TriangleMesh {
            vertices,
            normals: vec![vec3(0.0, 0.0, -1.0)],
            uvs: uvs.into_iter().map(|t| vec2(t[0], t[1])).collect(),
            triangles: vec![[[0, 0, 0], [1, 0, 1], [2, 0, 2]]],
            groups: vec![Group {
                name: "g".into(),
                material_index: 3,
                face_start: 0,
                face_count: 1,
            }],
        }
    }

    #[test]
    fn screen_facing_triangle_covers_center_pixel() {
        // triangle around the optical axis at z = 2
        let mesh = tri_mesh(
            vec![
                vec3(-0.5, -0.5, 2.0),
                vec3(0.5, -0.5, 2.0),
                vec3(0.0, 0.5, 2.0),
            ],
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
        );
        let buf = rasterize(&mesh, &Rigid::IDENTITY, &camera_64()).unwrap();
        let i = 32 * 64 + 32; // pixel (32, 32), center (32.5, 32.5)
        assert!(buf.coverage[i]);
        assert_eq!(buf.material[i], 3);
        assert!((buf.depth[i] - 2.0).abs() < 1e-12);
        // flat triangle: uv is an affine function of screen position. At
        // (32.5, 32.5) the world point is ((0.5/64)*2, (0.5/64)*2, 2).
        let wx: f64 = 0.5 / 64.0 * 2.0;
        let u = (wx + 0.5) / 1.0; // x spans [-0.5, 0.5] -> u in [0,1]
        assert!((buf.uv[i][0] - u).abs() < 1e-9, "{}", buf.uv[i][0]);
        assert_eq!(buf.diagnostics, RasterDiagnostics::default());
    }

    #[test]
    fn nearer_triangle_wins_depth_test() {
        let mut mesh = tri_mesh(
            vec![
                vec3(-1.0, -1.0, 4.0),
                vec3(1.0, -1.0, 4.0),
                vec3(0.0, 1.0, 4.0),
            ],
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
        );
        // second, nearer triangle with material 7
        mesh.vertices.extend([
            vec3(-1.0, -1.0, 2.0),
            vec3(1.0, -1.0, 2.0),
            vec3(0.0, 1.0, 2.0),
        ]);
        mesh.triangles.push([[3, 0, 0], [4, 0, 1], [5, 0, 2]]);
        mesh.groups.push(Group {
            name: "near".into(),
            material_index: 7,
            face_start: 1,
            face_count: 1,
        });
        let buf = rasterize(&mesh, &Rigid::IDENTITY, &camera_64()).unwrap();
        let i = 32 * 64 + 32;
        assert!(buf.coverage[i]);
        assert_eq!(buf.material[i], 7);
        assert!((buf.depth[i] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_is_counted_and_skipped() {
        let mesh = tri_mesh(
            vec![
                vec3(0.0, 0.0, 2.0),
                vec3(0.5, 0.5, 2.0),
                vec3(1.0, 1.0, 2.0), // collinear
            ],
            vec![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]],
        );
        let buf = rasterize(&mesh, &Rigid::IDENTITY, &camera_64()).unwrap();
        assert_eq!(buf.diagnostics.degenerate_triangles, 1);
        assert_eq!(buf.covered_pixels(), 0);
    }

    #[test]
    fn behind_camera_triangle_is_clipped() {
        let mesh = tri_mesh(
            vec![
                vec3(-0.5, -0.5, -2.0),
                vec3(0.5, -0.5, 2.0),
                vec3(0.0, 0.5, 2.0),
            ],
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
        );
        let buf = rasterize(&mesh, &Rigid::IDENTITY, &camera_64()).unwrap();
        assert_eq!(buf.diagnostics.clipped_triangles, 1);
        assert_eq!(buf.covered_pixels(), 0);
    }
}
