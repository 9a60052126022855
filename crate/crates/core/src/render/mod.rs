//! Software rendering: z-buffered perspective rasterization, bilinear texture
//! sampling into shading inputs, physically based image-based shading with an
//! exact albedo pullback, shadow-plane rendering and alpha composition.
//!
//! Camera convention: +z forward, +x right, +y down;
//! pixel (u, v) = (fx·x/z + cx, fy·y/z + cy).

mod composite;
mod raster;
mod sample;
mod shade;

pub use composite::{composite, tone_map};
pub use raster::{rasterize, RasterDiagnostics};
pub use sample::{sample_textures, SamplePullback, ShadeGrid};
pub use shade::{render_shadow_plane, shade, shade_with_grad, ShadePullback};

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::lighting::equirect;
use crate::math::{Mat3, Rigid, Vec3};

/// Pinhole camera with rigid world→camera pose.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World → camera.
    pub pose: Rigid,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive: fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let err = self.pose.rotation.orthonormality_error();
        if err >= 1e-6 {
            return Err(Error::Invalid(format!(
                "camera rotation is not orthonormal (error {err:.2e})"
            )));
        }
        Ok(())
    }

    /// Camera origin in world coordinates.
    pub fn position(&self) -> Vec3 {
        self.pose.inverse().translation
    }

    /// Project a camera-space point; `None` behind the camera.
    pub fn project(&self, p_cam: Vec3) -> Option<[f64; 2]> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some([
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ])
    }

    /// World-space direction of the ray through pixel center (x, y).
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        let d_cam = Vec3 {
            x: (x as f64 + 0.5 - self.cx) / self.fx,
            y: (y as f64 + 0.5 - self.cy) / self.fy,
            z: 1.0,
        };
        self.pose.inverse().apply_dir(d_cam).normalized()
    }
}

/// Per-pixel geometry written by the rasterizer. Uncovered pixels carry
/// zeroed attributes and depth +inf.
#[derive(Debug, Clone)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub uv: Vec<[f64; 2]>,
    pub material: Vec<u32>,
    /// World-space shading normal (unit where covered).
    pub normal: Vec<Vec3>,
    /// World-space position.
    pub position: Vec<Vec3>,
    /// Camera-space depth in meters; +inf where uncovered.
    pub depth: Vec<f64>,
    pub coverage: Vec<bool>,
    pub diagnostics: RasterDiagnostics,
}

impl RenderBuffers {
    pub fn covered_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Equirectangular radiance environment.
#[derive(Debug, Clone)]
pub struct EnvironmentMap {
    /// Linear radiance, W = 2H.
    pub radiance: ImageRgb,
    pub capture_position: Vec3,
    /// Map frame → world.
    pub orientation: Mat3,
}

impl EnvironmentMap {
    pub fn new(radiance: ImageRgb, capture_position: Vec3, orientation: Mat3) -> Result<Self> {
        let env = EnvironmentMap {
            radiance,
            capture_position,
            orientation,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radiance.width != 2 * self.radiance.height || self.radiance.height == 0 {
            return Err(Error::Invalid(format!(
                "environment map must be W=2H, got {}x{}",
                self.radiance.width, self.radiance.height
            )));
        }
        if !self
            .radiance
            .data
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite() && *c >= 0.0))
        {
            return Err(Error::Invalid(
                "environment radiance must be finite and non-negative".into(),
            ));
        }
        if self.orientation.orthonormality_error() >= 1e-6 {
            return Err(Error::Invalid(
                "environment orientation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// Uniform environment, identity orientation at the origin.
    pub fn uniform(width: usize, height: usize, radiance: [f64; 3]) -> Self {
        EnvironmentMap {
            radiance: ImageRgb::filled(width, height, radiance),
            capture_position: Vec3::ZERO,
            orientation: Mat3::IDENTITY,
        }
    }

    /// World-space direction of texel (col, row).
    pub fn texel_direction(&self, col: usize, row: usize) -> Vec3 {
        self.orientation.mul_vec(equirect::texel_direction(
            self.radiance.width,
            self.radiance.height,
            col,
            row,
        ))
    }

    pub fn texel_solid_angle(&self, row: usize) -> f64 {
        equirect::texel_solid_angle(self.radiance.width, self.radiance.height, row)
    }

    /// Box-downsample to at most `max_height` rows (solid-angle weighted), for
    /// cheaper shading sums. No-op when already small enough.
    pub fn downsampled(&self, max_height: usize) -> EnvironmentMap {
        let h = self.radiance.height;
        if h <= max_height {
            return self.clone();
        }
        let factor = h.div_ceil(max_height);
        let (nh, nw) = (h.div_ceil(factor), self.radiance.width.div_ceil(factor));
        let mut out = ImageRgb::new(nw, nh);
        for ny in 0..nh {
            for nx in 0..nw {
                let mut acc = [0.0; 3];
                let mut wsum = 0.0;
                for y in (ny * factor)..((ny + 1) * factor).min(h) {
                    let w_texel = self.texel_solid_angle(y);
                    for x in (nx * factor)..((nx + 1) * factor).min(self.radiance.width) {
                        let px = self.radiance.get(x, y);
                        for c in 0..3 {
                            acc[c] += px[c] * w_texel;
                        }
                        wsum += w_texel;
                    }
                }
                out.set(nx, ny, [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum]);
            }
        }
        EnvironmentMap {
            radiance: out,
            capture_position: self.capture_position,
            orientation: self.orientation,
        }
    }
}

/// Shading inputs for one covered pixel.
#[derive(Debug, Clone, Copy)]
pub struct ShadePixel {
    pub albedo: [f64; 3],
    /// Unit world-space normal.
    pub normal: Vec3,
    pub roughness: f64,
    /// Glass transmission; opaque pixels carry 0.
    pub transmission: f64,
    pub metallic: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;

    #[test]
    fn camera_projection_center() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            pose: Rigid::IDENTITY,
        };
        cam.validate().unwrap();
        let p = cam.project(vec3(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p, [32.0, 32.0]);
        assert!(cam.project(vec3(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn pixel_ray_inverts_projection() {
        let cam = CameraModel {
            fx: 80.0,
            fy: 90.0,
            cx: 30.0,
            cy: 20.0,
            width: 64,
            height: 48,
            pose: Rigid::new(Mat3::rot_z(0.3), vec3(1.0, 2.0, 3.0)),
        };
        let dir = cam.pixel_ray(10, 17);
        // march along the ray and reproject
        let p_world = cam.position() + dir * 5.0;
        let p_cam = cam.pose.apply(p_world);
        let px = cam.project(p_cam).unwrap();
        assert!((px[0] - 10.5).abs() < 1e-9);
        assert!((px[1] - 17.5).abs() < 1e-9);
    }

    #[test]
    fn env_validation_rejects_bad_aspect_and_negatives() {
        assert!(EnvironmentMap::new(
            ImageRgb::filled(10, 6, [1.0; 3]),
            Vec3::ZERO,
            Mat3::IDENTITY
        )
        .is_err());
        let mut img = ImageRgb::filled(8, 4, [1.0; 3]);
        img.set(2, 1, [-0.5, 0.0, 0.0]);
        assert!(EnvironmentMap::new(img, Vec3::ZERO, Mat3::IDENTITY).is_err());
    }

    #[test]
    fn downsample_preserves_uniform_radiance() {
        let env = EnvironmentMap::uniform(128, 64, [0.7, 0.6, 0.5]);
        let small = env.downsampled(16);
        assert_eq!(small.radiance.height, 16);
        for px in &small.radiance.data {
            for (c, want) in px.iter().zip([0.7, 0.6, 0.5]) {
                assert!((c - want).abs() < 1e-12);
            }
        }
    }
}
