//! Equidistant fisheye images: `r = f·θ` around the optical axis, with the
//! camera's rigid placement in the world. Only sampling is needed here — the
//! stitcher walks panorama directions and reads from each fisheye.

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::math::{Mat3, Vec3};

/// LDR fisheye capture with calibration and placement.
#[derive(Debug, Clone)]
pub struct FisheyeImage {
    pub image: ImageRgb,
    /// Full field of view in radians.
    pub fov: f64,
    /// Focal scale of the equidistant model (pixels per radian).
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera frame → world (+z optical axis, +x right, +y down).
    pub orientation: Mat3,
    pub position: Vec3,
}

impl FisheyeImage {
    pub fn validate(&self) -> Result<()> {
        if !(std::f64::consts::PI..std::f64::consts::TAU).contains(&self.fov) {
            return Err(Error::Invalid(format!(
                "fisheye field of view {} rad outside [pi, 2pi)",
                self.fov
            )));
        }
        if self.f <= 0.0 {
            return Err(Error::Invalid(format!("focal scale {} must be positive", self.f)));
        }
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        if !(0.0..w).contains(&self.cx) || !(0.0..h).contains(&self.cy) {
            return Err(Error::Invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.image.width, self.image.height
            )));
        }
        if self.orientation.orthonormality_error() >= 1e-6 {
            return Err(Error::Invalid("fisheye orientation is not orthonormal".into()));
        }
        // reflections are orthonormal too; require a proper rotation
        let r = &self.orientation.rows;
        let det = Vec3 { x: r[0][0], y: r[0][1], z: r[0][2] }
            .cross(Vec3 { x: r[1][0], y: r[1][1], z: r[1][2] })
            .dot(Vec3 { x: r[2][0], y: r[2][1], z: r[2][2] });
        if (det - 1.0).abs() >= 1e-6 {
            return Err(Error::Invalid(format!(
                "fisheye orientation determinant {det:.3} is not +1"
            )));
        }
        Ok(())
    }

    /// World direction of the optical axis.
    pub fn axis(&self) -> Vec3 {
        self.orientation.mul_vec(Vec3 { x: 0.0, y: 0.0, z: 1.0 })
    }

    /// Angle between a world direction and the optical axis.
    pub fn incidence(&self, dir: Vec3) -> f64 {
        self.axis().dot(dir.normalized()).clamp(-1.0, 1.0).acos()
    }

    /// Continuous pixel position of a world direction, or `None` when the
    /// direction is outside the field of view or falls off the image.
    pub fn project(&self, dir: Vec3) -> Option<(f64, f64)> {
        let d = self.orientation.transpose().mul_vec(dir.normalized());
        let theta = d.z.clamp(-1.0, 1.0).acos();
        if theta > self.fov / 2.0 {
            return None;
        }
        let radial = (d.x * d.x + d.y * d.y).sqrt();
        let (ux, uy) = if radial < 1e-12 {
            (0.0, 0.0)
        } else {
            (d.x / radial, d.y / radial)
        };
        let r = self.f * theta;
        let px = self.cx + r * ux;
        let py = self.cy + r * uy;
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        if !(0.0..w).contains(&px) || !(0.0..h).contains(&py) {
            return None;
        }
        Some((px, py))
    }

    /// Bilinear sample at a world direction; `None` outside coverage.
    pub fn sample(&self, dir: Vec3) -> Option<[f64; 3]> {
        let (px, py) = self.project(dir)?;
        Some(bilinear_clamped(&self.image, px, py))
    }
}

/// Bilinear interpolation with clamped borders; texel centers at integer
/// coordinates offset by 0.5.
fn bilinear_clamped(img: &ImageRgb, px: f64, py: f64) -> [f64; 3] {
    let x = px - 0.5;
    let y = py - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let cl = |v: f64, m: usize| (v.max(0.0) as usize).min(m - 1);
    let (x0i, x1i) = (cl(x0, img.width), cl(x0 + 1.0, img.width));
    let (y0i, y1i) = (cl(y0, img.height), cl(y0 + 1.0, img.height));
    let mut out = [0.0; 3];
    for (w, px) in [
        ((1.0 - fx) * (1.0 - fy), img.get(x0i, y0i)),
        (fx * (1.0 - fy), img.get(x1i, y0i)),
        ((1.0 - fx) * fy, img.get(x0i, y1i)),
        (fx * fy, img.get(x1i, y1i)),
    ] {
        for c in 0..3 {
            out[c] += w * px[c];
        }
    }
    out
}

/// Render a synthetic fisheye of an analytic sphere coloring; used by tests
/// and fixture generation.
pub fn render_fisheye(
    size: usize,
    fov: f64,
    orientation: Mat3,
    position: Vec3,
    shade: impl Fn(Vec3) -> [f64; 3],
) -> FisheyeImage {
    let c = size as f64 / 2.0;
    // radius at fov/2 lands on the image border with a half-pixel margin
    let f = (c - 0.5) / (fov / 2.0);
    let mut image = ImageRgb::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            let r = (dx * dx + dy * dy).sqrt();
            // pixels beyond the rim are rendered too (clamped at the back
            // pole) so bilinear taps near the rim have valid support
            let theta = (r / f).min(std::f64::consts::PI);
            let (ux, uy) = if r < 1e-12 { (0.0, 0.0) } else { (dx / r, dy / r) };
            let d_cam = Vec3 {
                x: theta.sin() * ux,
                y: theta.sin() * uy,
                z: theta.cos(),
            };
            image.set(x, y, shade(orientation.mul_vec(d_cam)));
        }
    }
    FisheyeImage {
        image,
        fov,
        f,
        cx: c,
        cy: c,
        orientation,
        position,
    }
}
