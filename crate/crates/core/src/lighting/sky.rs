//! LDR→HDR sky reconstruction and sky/ground composition. The sky model is a
//! plain inverse tone map (per-channel power) with a percentile-based sun
//! boost; composition linearizes the ground half of the panorama and matches
//! its value range to the sky across a thin boundary band.

use crate::error::{Error, Result};
use crate::img::{luminance, ImageRgb};
use crate::math::{smoothstep, Mat3};
use crate::render::EnvironmentMap;
use crate::retrieval::SegmentationMask;

use super::stitch::PanoramaLdr;

/// Parameters of the analytic sky model.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SkyModelParams {
    /// Inverse tone-map exponent.
    pub gamma: f64,
    /// Luminance percentile above which sky pixels count as sun.
    pub sun_percentile: f64,
    /// Peak radiance multiplier at the brightest sun pixel.
    pub sun_boost: f64,
    /// Sky/ground split row; `None` = equator (H/2).
    pub boundary_row: Option<usize>,
}

impl Default for SkyModelParams {
    fn default() -> Self {
        SkyModelParams {
            gamma: 2.2,
            sun_percentile: 99.5,
            sun_boost: 50.0,
            boundary_row: None,
        }
    }
}

impl SkyModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Invalid(format!("gamma {} must be positive", self.gamma)));
        }
        if !(90.0 < self.sun_percentile && self.sun_percentile < 100.0) {
            return Err(Error::Invalid(format!(
                "sun percentile {} outside (90, 100)",
                self.sun_percentile
            )));
        }
        if !(self.sun_boost > 1.0) {
            return Err(Error::Invalid(format!(
                "sun boost {} must exceed 1",
                self.sun_boost
            )));
        }
        Ok(())
    }

    pub fn boundary(&self, height: usize) -> usize {
        self.boundary_row.unwrap_or(height / 2).min(height)
    }
}

#[inline]
fn linearize(px: [f64; 3], gamma: f64) -> [f64; 3] {
    px.map(|c| c.max(0.0).powf(gamma))
}

/// Nearest-rank percentile of a sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median_of(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Reconstruct an HDR sky from the upper rows of an LDR panorama: inverse
/// tone map `x^gamma`, then boost the pixels above the sun luminance
/// percentile by up to `sun_boost` with a smooth ramp. Boosting is skipped
/// when the sky is too flat to contain a sun (max/median < 1.2). Output
/// covers rows `[0, boundary)`.
pub fn ldr_to_hdr_sky(pano: &PanoramaLdr, params: &SkyModelParams) -> Result<ImageRgb> {
    params.validate()?;
    let (w, h) = (pano.image.width, pano.image.height);
    let boundary = params.boundary(h);
    if boundary == 0 {
        return Err(Error::Empty("sky region has no rows".into()));
    }
    let mut sky = ImageRgb::new(w, boundary);
    for row in 0..boundary {
        for col in 0..w {
            sky.set(col, row, linearize(pano.image.get(col, row), params.gamma));
        }
    }
    let lums: Vec<f64> = sky.data.iter().map(|&p| luminance(p)).collect();
    let mut sorted = lums.clone();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().unwrap();
    let median = median_of(&mut sorted.clone()).unwrap();
    if median <= 0.0 && max <= 0.0 {
        return Ok(sky); // all-black sky
    }
    if max < 1.2 * median {
        return Ok(sky); // flat sky: no credible sun peak
    }
    let threshold = percentile_sorted(&sorted, params.sun_percentile);
    if max <= threshold {
        return Ok(sky);
    }
    for (px, &lum) in sky.data.iter_mut().zip(&lums) {
        if lum > threshold {
            let t = (lum - threshold) / (max - threshold);
            let factor = 1.0 + (params.sun_boost - 1.0) * smoothstep(0.0, 1.0, t);
            for c in px.iter_mut() {
                *c *= factor;
            }
        }
    }
    Ok(sky)
}

/// Compose the HDR sky with the linearized ground half of the panorama into a
/// world-frame environment map. The ground is scaled so the median luminance
/// of a 4-row band around the boundary matches the sky's; an empty band keeps
/// scale 1 and records a warning. An optional non-sky mask overrides the
/// row-based split above the boundary.
pub fn compose_envmap(
    hdr_sky: &ImageRgb,
    pano: &PanoramaLdr,
    non_sky_mask: Option<&SegmentationMask>,
    params: &SkyModelParams,
) -> Result<(EnvironmentMap, Vec<String>)> {
    params.validate()?;
    let (w, h) = (pano.image.width, pano.image.height);
    let boundary = params.boundary(h);
    if hdr_sky.width != w || hdr_sky.height != boundary {
        return Err(Error::Dimension(format!(
            "sky {}x{} does not cover panorama rows 0..{boundary} at width {w}",
            hdr_sky.width, hdr_sky.height
        )));
    }
    if let Some(m) = non_sky_mask {
        if m.width != w || m.height != h {
            return Err(Error::Dimension(format!(
                "non-sky mask {}x{} does not match panorama {w}x{h}",
                m.width, m.height
            )));
        }
    }
    let mut warnings = Vec::new();
    let is_ground = |col: usize, row: usize| -> bool {
        row >= boundary || non_sky_mask.is_some_and(|m| m.get(col, row))
    };

    // band medians: 2 rows of sky against 2 rows of ground around the split
    let band_rows = |lo: i64, hi: i64| (lo.max(0) as usize)..(hi.min(h as i64) as usize);
    let mut sky_band = Vec::new();
    let mut ground_band = Vec::new();
    for row in band_rows(boundary as i64 - 2, boundary as i64 + 2) {
        for col in 0..w {
            if is_ground(col, row) {
                ground_band.push(luminance(linearize(pano.image.get(col, row), params.gamma)));
            } else if row < boundary {
                sky_band.push(luminance(hdr_sky.get(col, row)));
            }
        }
    }
    let scale = match (median_of(&mut sky_band), median_of(&mut ground_band)) {
        (Some(s), Some(g)) if g > 0.0 => s / g,
        _ => {
            warnings.push(
                "empty or degenerate boundary band; ground kept at scale 1".to_string(),
            );
            1.0
        }
    };

    let mut out = ImageRgb::new(w, h);
    for row in 0..h {
        for col in 0..w {
            let px = if is_ground(col, row) {
                linearize(pano.image.get(col, row), params.gamma).map(|c| c * scale)
            } else {
                hdr_sky.get(col, row)
            };
            out.set(col, row, px);
        }
    }
    let env = EnvironmentMap::new(out, pano.capture_position, Mat3::IDENTITY)?;
    Ok((env, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn pano_of(image: ImageRgb) -> PanoramaLdr {
        PanoramaLdr {
            image,
            capture_position: Vec3::ZERO,
        }
    }

    #[test]
    fn black_sky_stays_black() {
        let pano = pano_of(ImageRgb::new(32, 16));
        let sky = ldr_to_hdr_sky(&pano, &SkyModelParams::default()).unwrap();
        assert!(sky.data.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn uniform_sky_is_pure_gamma_expansion() {
        let pano = pano_of(ImageRgb::filled(32, 16, [0.5; 3]));
        let sky = ldr_to_hdr_sky(&pano, &SkyModelParams::default()).unwrap();
        let want = 0.5f64.powf(2.2);
        assert_eq!(sky.height, 8);
        for px in &sky.data {
            for c in px {
                assert!((c - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sun_disk_is_boosted_and_background_is_not() {
        let mut img = ImageRgb::filled(128, 64, [0.3; 3]);
        // 3x3 saturated disk, well under 0.5% of the 128x32 sky region
        for y in 5..8 {
            for x in 40..43 {
                img.set(x, y, [1.0; 3]);
            }
        }
        let pano = pano_of(img);
        let params = SkyModelParams::default();
        let sky = ldr_to_hdr_sky(&pano, &params).unwrap();
        let gray = 0.3f64.powf(2.2);
        assert!((sky.get(0, 0)[0] - gray).abs() < 1e-12, "background changed");
        let sun = sky.get(41, 6)[0];
        assert!(
            (sun - params.sun_boost).abs() < 1e-9,
            "peak sun pixel should be boost x linearized(1.0) = {}, got {sun}",
            params.sun_boost
        );
    }

    #[test]
    fn hdr_sky_is_monotone_under_uniform_scaling() {
        let mut img = ImageRgb::filled(64, 32, [0.3; 3]);
        for x in 10..14 {
            img.set(x, 3, [0.95; 3]);
        }
        let brighter = pano_of(img.clone());
        let darker = pano_of(ImageRgb {
            width: 64,
            height: 32,
            data: img.data.iter().map(|p| p.map(|c| 0.7 * c)).collect(),
        });
        let params = SkyModelParams::default();
        let a = ldr_to_hdr_sky(&darker, &params).unwrap();
        let b = ldr_to_hdr_sky(&brighter, &params).unwrap();
        for (pa, pb) in a.data.iter().zip(&b.data) {
            for c in 0..3 {
                assert!(pa[c] <= pb[c] + 1e-12);
            }
        }
    }

    #[test]
    fn aligned_constant_map_composes_seamlessly() {
        let pano = pano_of(ImageRgb::filled(32, 16, [0.5; 3]));
        let params = SkyModelParams::default();
        let sky = ldr_to_hdr_sky(&pano, &params).unwrap();
        let (env, warnings) = compose_envmap(&sky, &pano, None, &params).unwrap();
        assert!(warnings.is_empty());
        let want = 0.5f64.powf(2.2);
        for px in &env.radiance.data {
            for c in px {
                assert!((c - want).abs() < 1e-6);
            }
        }
        // boundary continuity
        for col in 0..32 {
            let above = env.radiance.get(col, 7)[0];
            let below = env.radiance.get(col, 8)[0];
            assert!((above - below).abs() < 1e-6);
        }
    }

    #[test]
    fn darker_ground_band_is_scaled_up() {
        let mut img = ImageRgb::filled(32, 16, [0.5; 3]);
        let dark = 0.5 * 2f64.powf(-1.0 / 2.2); // linearizes to half the sky value
        for row in 8..16 {
            for col in 0..32 {
                img.set(col, row, [dark; 3]);
            }
        }
        let pano = pano_of(img);
        let params = SkyModelParams::default();
        let sky = ldr_to_hdr_sky(&pano, &params).unwrap();
        let (env, _) = compose_envmap(&sky, &pano, None, &params).unwrap();
        let want = 0.5f64.powf(2.2);
        for row in 8..16 {
            let got = env.radiance.get(5, row)[0];
            assert!((got - want).abs() < 1e-9, "row {row}: {got} vs {want}");
        }
    }

    #[test]
    fn full_non_sky_mask_yields_linearized_panorama() {
        let pano = pano_of(ImageRgb::filled(32, 16, [0.4; 3]));
        let params = SkyModelParams::default();
        let sky = ldr_to_hdr_sky(&pano, &params).unwrap();
        let mask = SegmentationMask::new(32, 16, vec![true; 512], "ground".into(), 1.0, 0).unwrap();
        let (env, warnings) = compose_envmap(&sky, &pano, Some(&mask), &params).unwrap();
        assert_eq!(warnings.len(), 1, "expected empty-sky-band warning");
        let want = 0.4f64.powf(2.2);
        for px in &env.radiance.data {
            assert!((px[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_scales_with_gamma_power_of_ldr_scale() {
        // full-chain linearity: s-scaled LDR panorama (no sun) -> ground
        // region scales by s^gamma
        let mut img = ImageRgb::new(32, 16);
        for (i, px) in img.data.iter_mut().enumerate() {
            let v = 0.3 + 0.05 * ((i % 7) as f64 / 7.0);
            *px = [v, v * 0.9, v * 0.8];
        }
        let params = SkyModelParams::default();
        let s = 0.6;
        let scaled = pano_of(ImageRgb {
            width: 32,
            height: 16,
            data: img.data.iter().map(|p| p.map(|c| s * c)).collect(),
        });
        let base = pano_of(img);
        let (env_a, _) = compose_envmap(
            &ldr_to_hdr_sky(&base, &params).unwrap(),
            &base,
            None,
            &params,
        )
        .unwrap();
        let (env_b, _) = compose_envmap(
            &ldr_to_hdr_sky(&scaled, &params).unwrap(),
            &scaled,
            None,
            &params,
        )
        .unwrap();
        let k = s.powf(params.gamma);
        for row in 8..16 {
            for col in 0..32 {
                let a = env_a.radiance.get(col, row);
                let b = env_b.radiance.get(col, row);
                for c in 0..3 {
                    assert!((b[c] - k * a[c]).abs() < 1e-9 * a[c].max(1.0));
                }
            }
        }
    }
}
