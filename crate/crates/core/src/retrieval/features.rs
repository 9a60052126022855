//! Deterministic descriptor grids. External feature maps are ingested from
//! files; the built-in provider is a fixed multi-scale oriented
//! difference-of-Gaussians filter bank, good enough for pose matching and
//! correspondence search without any learned encoder.

use crate::img::{ImageRgb, Planes};

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Ingested,
    BuiltinFilterBank,
}

/// Real-valued descriptor grid; channel-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub planes: Planes,
    pub source: FeatureSource,
}

impl FeatureMap {
    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.planes.width == other.planes.width
            && self.planes.height == other.planes.height
            && self.planes.channels == other.planes.channels
    }

    /// Per-pixel descriptor (one value per channel).
    pub fn descriptor(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.planes.channels)
            .map(|c| self.planes.get(c, x, y))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.planes.data.iter().all(|v| v.is_finite())
    }
}

/// Scales (in pixels) of the built-in bank; each contributes four oriented
/// band-pass channels on top of the raw luminance channel.
const SCALES: [usize; 3] = [1, 2, 4];
/// Orientation unit steps: 0°, 45°, 90°, 135°.
const ORIENTS: [(i64, i64); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];

/// 13-channel descriptor grid: luminance plus, per scale s ∈ {1, 2, 4} and
/// orientation o, the difference of the Gaussian-blurred luminance at ±s·o.
/// Borders clamp, so shift equivariance holds away from the edges.
pub fn builtin_features(image: &ImageRgb) -> FeatureMap {
    let (w, h) = (image.width, image.height);
    let lum = image.luminance();
    let mut planes = Planes::new(w, h, 1 + SCALES.len() * ORIENTS.len());
    planes.plane_mut(0).copy_from_slice(&lum.data);

    let mut c = 1;
    for &s in &SCALES {
        let blurred = gaussian_blur(&lum.data, w, h, s as f64);
        for &(ox, oy) in &ORIENTS {
            let (dx, dy) = (ox * s as i64, oy * s as i64);
            let plane = planes.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let a = sample_clamped(&blurred, w, h, x as i64 + dx, y as i64 + dy);
                    let b = sample_clamped(&blurred, w, h, x as i64 - dx, y as i64 - dy);
                    plane[y * w + x] = a - b;
                }
            }
            c += 1;
        }
    }
    FeatureMap {
        planes,
        source: FeatureSource::BuiltinFilterBank,
    }
}

/// Exact adjoint of [`builtin_features`]: maps cotangents on all 13 feature
/// planes back to cotangents on the input RGB image. The whole bank is linear
/// in the image, so the adjoint is a plain transpose (scatter-adds mirroring
/// every clamped-border read in the forward pass).
pub fn builtin_features_adjoint(cot: &Planes) -> Vec<[f64; 3]> {
    let (w, h) = (cot.width, cot.height);
    let mut lum_cot = cot.plane(0).to_vec();

    let mut c = 1;
    for &s in &SCALES {
        // adjoint of the per-orientation shifted differences, into the
        // blurred field's cotangent
        let mut blurred_cot = vec![0.0; w * h];
        for &(ox, oy) in &ORIENTS {
            let (dx, dy) = (ox * s as i64, oy * s as i64);
            let plane = cot.plane(c);
            for y in 0..h {
                for x in 0..w {
                    let v = plane[y * w + x];
                    scatter_clamped(&mut blurred_cot, w, h, x as i64 + dx, y as i64 + dy, v);
                    scatter_clamped(&mut blurred_cot, w, h, x as i64 - dx, y as i64 - dy, -v);
                }
            }
            c += 1;
        }
        let back = gaussian_blur_adjoint(&blurred_cot, w, h, s as f64);
        for (acc, v) in lum_cot.iter_mut().zip(back) {
            *acc += v;
        }
    }

    // adjoint of Rec. 709 luminance
    lum_cot
        .into_iter()
        .map(|v| [0.2126 * v, 0.7152 * v, 0.0722 * v])
        .collect()
}

#[inline]
fn scatter_clamped(data: &mut [f64], w: usize, h: usize, x: i64, y: i64, v: f64) {
    let x = x.clamp(0, w as i64 - 1) as usize;
    let y = y.clamp(0, h as i64 - 1) as usize;
    data[y * w + x] += v;
}

/// Transpose of [`gaussian_blur`]: vertical-pass adjoint first, then
/// horizontal, each scattering through the same clamped taps.
fn gaussian_blur_adjoint(cot: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = cot[y * w + x];
            for (j, k) in kernel.iter().enumerate() {
                scatter_clamped(&mut tmp, w, h, x as i64, y as i64 + j as i64 - radius, k * v);
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = tmp[y * w + x];
            for (j, k) in kernel.iter().enumerate() {
                scatter_clamped(&mut out, w, h, x as i64 + j as i64 - radius, y as i64, k * v);
            }
        }
    }
    out
}

#[inline]
fn sample_clamped(data: &[f64], w: usize, h: usize, x: i64, y: i64) -> f64 {
    let x = x.clamp(0, w as i64 - 1) as usize;
    let y = y.clamp(0, h as i64 - 1) as usize;
    data[y * w + x]
}

/// Separable Gaussian blur with a kernel truncated at 3σ, clamped borders.
fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * sample_clamped(data, w, h, x as i64 + j as i64 - radius, y as i64);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * sample_clamped(&tmp, w, h, x as i64, y as i64 + j as i64 - radius);
            }
            out[y * w + x] = acc;
        }
    }
    out
}
