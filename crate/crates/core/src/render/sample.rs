//! Texture sampling into per-pixel shading inputs: bilinear filtering with
//! wrap addressing, tangent-space normal application, and the transposed
//! bilinear pullback that routes pixel albedo cotangents back to texels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matgraph::TextureSet;
use crate::math::Vec3;

use super::{RenderBuffers, ShadePixel};

/// Shading inputs; `None` where the rasterizer left no coverage.
#[derive(Debug, Clone)]
pub struct ShadeGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Option<ShadePixel>>,
}

/// One bilinear tap: texel index and weight.
type Tap = (usize, f64);

/// Albedo sampling record for one covered pixel.
#[derive(Debug, Clone)]
struct PixelTaps {
    pixel: usize,
    material: u32,
    taps: [Tap; 4],
}

/// Transposed bilinear filter: routes per-pixel albedo cotangents to texels.
#[derive(Debug, Clone)]
pub struct SamplePullback {
    records: Vec<PixelTaps>,
    /// texel count per material, for sizing gradient buffers
    texel_counts: BTreeMap<u32, usize>,
}

impl SamplePullback {
    /// Map per-pixel albedo cotangents (full image grid, row-major) to
    /// per-material albedo texel cotangents. Accumulation follows the fixed
    /// record order, so results are bit-reproducible.
    pub fn pull(&self, pixel_cot: &[[f64; 3]]) -> BTreeMap<u32, Vec<[f64; 3]>> {
        let mut out: BTreeMap<u32, Vec<[f64; 3]>> = self
            .texel_counts
            .iter()
            .map(|(&m, &n)| (m, vec![[0.0; 3]; n]))
            .collect();
        for rec in &self.records {
            let cot = pixel_cot[rec.pixel];
            let grad = out.get_mut(&rec.material).expect("known material");
            for &(texel, weight) in &rec.taps {
                for c in 0..3 {
                    grad[texel][c] += weight * cot[c];
                }
            }
        }
        out
    }
}

/// Sample per-pixel shading inputs from the material textures named by the
/// raster buffers. Bilinear filtering with wrap addressing on all maps; the
/// tangent-space normal from the texture is rotated into a frame built around
/// the interpolated shading normal.
pub fn sample_textures(
    buffers: &RenderBuffers,
    textures: &BTreeMap<u32, TextureSet>,
) -> Result<(ShadeGrid, SamplePullback)> {
    let n = buffers.width * buffers.height;
    let mut pixels = vec![None; n];
    let mut records = Vec::new();
    for i in 0..n {
        if !buffers.coverage[i] {
            continue;
        }
        let material = buffers.material[i];
        let Some(tex) = textures.get(&material) else {
            return Err(Error::Invalid(format!(
                "no texture set for material index {material}"
            )));
        };
        let [u, v] = buffers.uv[i];
        let taps = bilinear_taps(u, v, tex.width, tex.height);

        let mut albedo = [0.0; 3];
        let mut tangent_normal = [0.0; 3];
        let mut roughness = 0.0;
        let mut transmission = 0.0;
        for &(t, w) in &taps {
            for c in 0..3 {
                albedo[c] += w * tex.albedo[t][c];
                tangent_normal[c] += w * tex.normal[t][c];
            }
            roughness += w * tex.roughness[t];
            if let Some(tr) = &tex.transmission {
                transmission += w * tr[t];
            }
        }

        let shading_normal = buffers.normal[i];
        let (t_axis, b_axis) = tangent_frame(shading_normal);
        let normal = (t_axis * tangent_normal[0]
            + b_axis * tangent_normal[1]
            + shading_normal * tangent_normal[2])
            .normalized();

        pixels[i] = Some(ShadePixel {
            albedo,
            normal,
            roughness,
            transmission,
            metallic: tex.metallic,
        });
        records.push(PixelTaps {
            pixel: i,
            material,
            taps,
        });
    }
    let texel_counts = textures
        .iter()
        .map(|(&m, t)| (m, t.width * t.height))
        .collect();
    Ok((
        ShadeGrid {
            width: buffers.width,
            height: buffers.height,
            pixels,
        },
        SamplePullback {
            records,
            texel_counts,
        },
    ))
}

/// Four wrap-addressed bilinear taps for uv (texel centers at (i + 0.5)/W).
fn bilinear_taps(u: f64, v: f64, width: usize, height: usize) -> [Tap; 4] {
    let px = u * width as f64 - 0.5;
    let py = v * height as f64 - 0.5;
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let wrap = |i: f64, m: usize| (i as i64).rem_euclid(m as i64) as usize;
    let (x0i, x1i) = (wrap(x0, width), wrap(x0 + 1.0, width));
    let (y0i, y1i) = (wrap(y0, height), wrap(y0 + 1.0, height));
    [
        (y0i * width + x0i, (1.0 - fx) * (1.0 - fy)),
        (y0i * width + x1i, fx * (1.0 - fy)),
        (y1i * width + x0i, (1.0 - fx) * fy),
        (y1i * width + x1i, fx * fy),
    ]
}

/// Deterministic orthonormal tangent/bitangent around a unit normal.
fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let up = if n.z.abs() < 0.999 {
        Vec3 { x: 0.0, y: 0.0, z: 1.0 }
    } else {
        Vec3 { x: 1.0, y: 0.0, z: 0.0 }
    };
    let t = up.cross(n).normalized();
    let b = n.cross(t);
    (t, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::render::RasterDiagnostics;

    fn flat_texture(w: usize, h: usize, f: impl Fn(usize) -> [f64; 3]) -> TextureSet {
        TextureSet {
            width: w,
            height: h,
            albedo: (0..w * h).map(f).collect(),
            normal: vec![[0.0, 0.0, 1.0]; w * h],
            roughness: vec![0.5; w * h],
            transmission: None,
            metallic: 0.0,
        }
    }

    fn one_pixel_buffers(uv: [f64; 2]) -> RenderBuffers {
        RenderBuffers {
            width: 1,
            height: 1,
            uv: vec![uv],
            material: vec![0],
            normal: vec![vec3(0.0, 0.0, 1.0)],
            position: vec![Vec3::ZERO],
            depth: vec![1.0],
            coverage: vec![true],
            diagnostics: RasterDiagnostics::default(),
        }
    }

    #[test]
    fn texel_center_returns_exact_texel() {
        let tex = flat_texture(4, 4, |i| [i as f64, 0.0, 0.0]);
        let mut textures = BTreeMap::new();
        textures.insert(0, tex);
        // texel (2, 1) center: u = 2.5/4, v = 1.5/4
        let buffers = one_pixel_buffers([2.5 / 4.0, 1.5 / 4.0]);
        let (grid, _) = sample_textures(&buffers, &textures).unwrap();
        let px = grid.pixels[0].unwrap();
        assert!((px.albedo[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_texture_is_uv_independent() {
        let tex = flat_texture(8, 8, |_| [0.3, 0.6, 0.9]);
        let mut textures = BTreeMap::new();
        textures.insert(0, tex);
        for uv in [[0.0, 0.0], [0.97, 0.03], [0.5, 0.999], [0.123, 0.456]] {
            let (grid, _) = sample_textures(&one_pixel_buffers(uv), &textures).unwrap();
            let px = grid.pixels[0].unwrap();
            for (a, b) in px.albedo.iter().zip([0.3, 0.6, 0.9]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_material_is_an_error() {
        let textures = BTreeMap::new();
        assert!(sample_textures(&one_pixel_buffers([0.5, 0.5]), &textures).is_err());
    }

    #[test]
    fn gradient_wrt_texel_matches_finite_differences() {
        let mut textures = BTreeMap::new();
        textures.insert(0, flat_texture(4, 4, |i| [0.1 * i as f64, 0.2, 0.3]));
        // several pixels with assorted uvs, including wrap-around
        let uvs = vec![[0.1, 0.2], [0.62, 0.77], [0.99, 0.01], [0.5, 0.5]];
        let buffers = RenderBuffers {
            width: 2,
            height: 2,
            uv: uvs,
            material: vec![0; 4],
            normal: vec![vec3(0.0, 0.0, 1.0); 4],
            position: vec![Vec3::ZERO; 4],
            depth: vec![1.0; 4],
            coverage: vec![true; 4],
            diagnostics: RasterDiagnostics::default(),
        };
        let sum_red = |textures: &BTreeMap<u32, TextureSet>| -> f64 {
            let (grid, _) = sample_textures(&buffers, textures).unwrap();
            grid.pixels
                .iter()
                .flatten()
                .map(|p| p.albedo[0])
                .sum()
        };
        let (_, pb) = sample_textures(&buffers, &textures).unwrap();
        let grad = pb.pull(&vec![[1.0, 0.0, 0.0]; 4]);
        let probe_texel = 5;
        let h = 1e-5;
        let mut bumped = textures.clone();
        bumped.get_mut(&0).unwrap().albedo[probe_texel][0] += h;
        let fd = (sum_red(&bumped) - sum_red(&textures)) / h;
        assert!(
            (grad[&0][probe_texel][0] - fd).abs() < 1e-6,
            "{} vs {}",
            grad[&0][probe_texel][0],
            fd
        );
    }

    #[test]
    fn pullback_is_adjoint_of_forward() {
        // <cot, J delta> == <J^T cot, delta> for random-ish values
        let mut textures = BTreeMap::new();
        textures.insert(0, flat_texture(4, 2, |i| [0.1 * i as f64, 0.0, 0.0]));
        let uvs = vec![[0.13, 0.71], [0.88, 0.44], [0.5, 0.9], [0.02, 0.02]];
        let buffers = RenderBuffers {
            width: 2,
            height: 2,
            uv: uvs,
            material: vec![0; 4],
            normal: vec![vec3(0.0, 0.0, 1.0); 4],
            position: vec![Vec3::ZERO; 4],
            depth: vec![1.0; 4],
            coverage: vec![true; 4],
            diagnostics: RasterDiagnostics::default(),
        };
        let (base, pb) = sample_textures(&buffers, &textures).unwrap();

        let delta: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    ((i * 7 + 1) as f64 * 0.37).sin(),
                    ((i * 5 + 2) as f64 * 0.73).sin(),
                    ((i * 3 + 5) as f64 * 0.19).sin(),
                ]
            })
            .collect();
        let cot: Vec<[f64; 3]> = (0..4)
            .map(|i| {
                [
                    ((i * 11 + 3) as f64 * 0.53).cos(),
                    ((i * 13 + 4) as f64 * 0.29).cos(),
                    ((i * 17 + 6) as f64 * 0.61).cos(),
                ]
            })
            .collect();

        // forward: J * delta via linearity of sampling in albedo
        let mut perturbed = textures.clone();
        {
            let tex = perturbed.get_mut(&0).unwrap();
            for (px, d) in tex.albedo.iter_mut().zip(&delta) {
                for c in 0..3 {
                    px[c] += d[c];
                }
            }
        }
        let (moved, _) = sample_textures(&buffers, &perturbed).unwrap();
        let mut lhs = 0.0;
        for i in 0..4 {
            let (a, b) = (moved.pixels[i].unwrap(), base.pixels[i].unwrap());
            for c in 0..3 {
                lhs += cot[i][c] * (a.albedo[c] - b.albedo[c]);
            }
        }
        let grad = pb.pull(&cot);
        let mut rhs = 0.0;
        for (g, d) in grad[&0].iter().zip(&delta) {
            for c in 0..3 {
                rhs += g[c] * d[c];
            }
        }
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }
}
