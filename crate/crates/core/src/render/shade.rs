//! Image-based shading by direct summation over environment texels, with an
//! exact per-pixel albedo derivative, plus shadow-plane rendering via ray
//! casts against the occluder mesh.

use rayon::prelude::*;

use crate::assets::TriangleMesh;
use crate::error::Result;
use crate::img::{ImageGray, ImageRgb};
use crate::math::{Rigid, Vec3};

use super::{CameraModel, EnvironmentMap, ShadeGrid, ShadePixel};

/// One environment sample: direction, solid angle, radiance.
struct EnvSample {
    dir: Vec3,
    weight: f64, // solid angle
    radiance: [f64; 3],
}

fn env_samples(env: &EnvironmentMap) -> Vec<EnvSample> {
    let (w, h) = (env.radiance.width, env.radiance.height);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        let weight = env.texel_solid_angle(row);
        for col in 0..w {
            out.push(EnvSample {
                dir: env.texel_direction(col, row),
                weight,
                radiance: env.radiance.get(col, row),
            });
        }
    }
    out
}

/// Per-pixel diagonal derivative of the shaded color with respect to the
/// pixel's sampled albedo: `d out_c / d albedo_c`. The shading model couples
/// channels only through per-channel Fresnel, so the Jacobian is diagonal.
#[derive(Debug, Clone)]
pub struct ShadePullback {
    d_albedo: Vec<[f64; 3]>,
}

impl ShadePullback {
    /// Map image-space cotangents to per-pixel albedo cotangents.
    pub fn pull(&self, out_cot: &[[f64; 3]]) -> Vec<[f64; 3]> {
        self.d_albedo
            .iter()
            .zip(out_cot)
            .map(|(d, c)| [d[0] * c[0], d[1] * c[1], d[2] * c[2]])
            .collect()
    }
}

/// Shade every covered pixel against the environment. Returns linear HDR
/// radiance and per-pixel alpha (1 opaque, `1 - transmission` for glass,
/// 0 uncovered).
pub fn shade(
    grid: &ShadeGrid,
    env: &EnvironmentMap,
    camera: &CameraModel,
) -> Result<(ImageRgb, Vec<f64>)> {
    let (image, alpha, _) = shade_impl(grid, env, camera, false)?;
    Ok((image, alpha))
}

/// [`shade`] plus the exact albedo derivative used by material optimization.
/// Roughness is treated as fixed, so no roughness derivative is produced.
pub fn shade_with_grad(
    grid: &ShadeGrid,
    env: &EnvironmentMap,
    camera: &CameraModel,
) -> Result<(ImageRgb, Vec<f64>, ShadePullback)> {
    let (image, alpha, d) = shade_impl(grid, env, camera, true)?;
    Ok((image, alpha, ShadePullback { d_albedo: d }))
}

/// Angular spacing of the environment grid; W = 2H makes the azimuthal
/// spacing at the equator equal to the row spacing, so one number covers
/// both axes.
fn env_angular_spacing(env: &EnvironmentMap) -> f64 {
    std::f64::consts::PI / env.radiance.height as f64
}

fn shade_impl(
    grid: &ShadeGrid,
    env: &EnvironmentMap,
    camera: &CameraModel,
    want_grad: bool,
) -> Result<(ImageRgb, Vec<f64>, Vec<[f64; 3]>)> {
    env.validate()?;
    camera.validate()?;
    let samples = env_samples(env);
    let spacing = env_angular_spacing(env);
    let n = grid.width * grid.height;

    let results: Vec<([f64; 3], f64, [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let Some(px) = &grid.pixels[i] else {
                return ([0.0; 3], 0.0, [0.0; 3]);
            };
            let view = -camera.pixel_ray(i % grid.width, i / grid.width);
            let (color, d_albedo) = shade_pixel(px, view, &samples, spacing, want_grad);
            let alpha = if px.transmission > 0.0 {
                1.0 - px.transmission
            } else {
                1.0
            };
            (color, alpha, d_albedo)
        })
        .collect();

    let mut image = ImageRgb::new(grid.width, grid.height);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![[0.0; 3]; n];
    for (i, (c, a, g)) in results.into_iter().enumerate() {
        image.data[i] = c;
        alpha[i] = a;
        grad[i] = g;
    }
    Ok((image, alpha, grad))
}

/// Effective GGX alpha: `roughness²`, widened by the light-grid footprint so
/// the specular lobe is always resolvable by the texel sum. Without this,
/// narrow lobes alias against the discrete environment and break energy
/// conservation.
fn effective_alpha(roughness: f64, spacing: f64) -> f64 {
    let a = roughness * roughness;
    (a * a + (2.0 * spacing).powi(2)).sqrt().min(1.0)
}

/// Sum the GGX + Lambert contribution of every environment sample for one
/// pixel. Returns the linear color and, when requested, the per-channel
/// derivative with respect to albedo.
fn shade_pixel(
    px: &ShadePixel,
    view: Vec3,
    samples: &[EnvSample],
    spacing: f64,
    want_grad: bool,
) -> ([f64; 3], [f64; 3]) {
    let n = px.normal;
    let m = px.metallic.clamp(0.0, 1.0);
    let glass = px.transmission > 0.0;
    let alpha_r = effective_alpha(px.roughness, spacing);
    let a2 = alpha_r * alpha_r;
    let nv = n.dot(view).max(1e-9);
    // per-channel Fresnel at normal incidence; grazing reflectance scales
    // with F0 so a zero-reflectance surface stays exactly black
    let f0: [f64; 3] = std::array::from_fn(|c| 0.04 * (1.0 - m) + m * px.albedo[c]);
    let f90: [f64; 3] = std::array::from_fn(|c| (50.0 * f0[c]).min(1.0));

    let mut out = [0.0; 3];
    let mut d_albedo = [0.0; 3];
    for s in samples {
        let nl = n.dot(s.dir);
        if nl <= 0.0 {
            continue;
        }
        let h = (view + s.dir).normalized();
        let nh = n.dot(h).clamp(0.0, 1.0);
        let vh = view.dot(h).clamp(0.0, 1.0);

        // GGX normal distribution
        let denom = nh * nh * (a2 - 1.0) + 1.0;
        let d_ggx = a2 / (std::f64::consts::PI * denom * denom);
        // Smith height-correlated visibility (includes the 1/(4 NL NV) factor)
        let lv = nl * (nv * nv * (1.0 - a2) + a2).sqrt();
        let ll = nv * (nl * nl * (1.0 - a2) + a2).sqrt();
        let vis = 0.5 / (lv + ll).max(1e-12);
        let spec_dv = d_ggx * vis;
        let fres_pow = (1.0 - vh).powi(5);

        let scale = nl * s.weight;
        for c in 0..3 {
            let f = f0[c] + (f90[c] - f0[c]) * fres_pow;
            let mut val = spec_dv * f;
            if !glass {
                val += (1.0 - f) * (1.0 - m) * px.albedo[c] / std::f64::consts::PI;
            }
            out[c] += val * s.radiance[c] * scale;
            if want_grad {
                // dF/dA via F0 (dF0/dA = metallic); the grazing scale F90
                // saturates at 1 for any non-trivial F0
                let df90 = if 50.0 * f0[c] < 1.0 { 50.0 } else { 0.0 };
                let df = m * ((1.0 - fres_pow) + fres_pow * df90);
                let mut dv = spec_dv * df;
                if !glass {
                    dv += (1.0 - m) / std::f64::consts::PI * ((1.0 - f) - px.albedo[c] * df);
                }
                d_albedo[c] += dv * s.radiance[c] * scale;
            }
        }
    }
    (out, d_albedo)
}

/// Watertight Möller–Trumbore: does the ray hit any mesh triangle at t > eps?
fn ray_hits_mesh(origin: Vec3, dir: Vec3, vertices: &[Vec3], triangles: &[[u32; 3]]) -> bool {
    const EPS_T: f64 = 1e-9;
    for tri in triangles {
        let v0 = vertices[tri[0] as usize];
        let e1 = vertices[tri[1] as usize] - v0;
        let e2 = vertices[tri[2] as usize] - v0;
        let pvec = dir.cross(e2);
        let det = e1.dot(pvec);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv_det = 1.0 / det;
        let tvec = origin - v0;
        let u = tvec.dot(pvec) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let qvec = tvec.cross(e1);
        let v = dir.dot(qvec) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = e2.dot(qvec) * inv_det;
        if t > EPS_T {
            return true;
        }
    }
    false
}

/// Per-pixel shadow factor on a ground plane: the ratio of plane irradiance
/// with the occluder mesh in place to unoccluded irradiance. Pixels whose
/// camera ray misses the plane (or sees an unlit plane) get factor 1.
pub fn render_shadow_plane(
    mesh: &TriangleMesh,
    model_pose: &Rigid,
    plane_point: Vec3,
    plane_normal: Vec3,
    env: &EnvironmentMap,
    camera: &CameraModel,
) -> Result<ImageGray> {
    env.validate()?;
    camera.validate()?;
    mesh.validate()?;
    let n_plane = plane_normal.normalized();
    let samples = env_samples(env);
    // world-space occluder geometry, positions only
    let world_verts: Vec<Vec3> = mesh
        .vertices
        .iter()
        .map(|&v| model_pose.apply(v))
        .collect();
    let tris: Vec<[u32; 3]> = mesh
        .triangles
        .iter()
        .map(|t| [t[0][0], t[1][0], t[2][0]])
        .collect();
    let origin = camera.position();

    let factors: Vec<f64> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray(i % camera.width, i / camera.width);
            let denom = ray.dot(n_plane);
            if denom.abs() < 1e-12 {
                return 1.0;
            }
            let t = (plane_point - origin).dot(n_plane) / denom;
            if t <= 0.0 {
                return 1.0;
            }
            let p = origin + ray * t;
            let mut unocc = 0.0;
            let mut occ = 0.0;
            for s in &samples {
                let nl = n_plane.dot(s.dir);
                if nl <= 0.0 {
                    continue;
                }
                let lum = crate::img::luminance(s.radiance);
                let e = lum * nl * s.weight;
                unocc += e;
                if !ray_hits_mesh(p, s.dir, &world_verts, &tris) {
                    occ += e;
                }
            }
            if unocc <= 0.0 {
                1.0
            } else {
                occ / unocc
            }
        })
        .collect();

    Ok(ImageGray {
        width: camera.width,
        height: camera.height,
        data: factors,
    })
}
