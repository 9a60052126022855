//! Tone mapping and alpha composition of the shaded foreground over a
//! background photograph, with shadow-plane modulation.

use crate::error::{Error, Result};
use crate::img::{ImageGray, ImageRgb};

/// Map linear radiance to display values: `clamp((x * exposure)^(1/gamma))`
/// per channel into [0, 1]. Negative inputs clamp to 0 before the power.
pub fn tone_map(x: [f64; 3], exposure: f64, gamma: f64) -> [f64; 3] {
    std::array::from_fn(|c| {
        let v = (x[c] * exposure).max(0.0);
        v.powf(1.0 / gamma).clamp(0.0, 1.0)
    })
}

/// Compose the rendered foreground over a background image:
/// `out = tone_map(fg) * alpha + bg * shadow * (1 - alpha)` per pixel.
pub fn composite(
    foreground: &ImageRgb,
    alpha: &[f64],
    shadow: &ImageGray,
    background: &ImageRgb,
    exposure: f64,
    gamma: f64,
) -> Result<ImageRgb> {
    let (w, h) = (background.width, background.height);
    if foreground.width != w
        || foreground.height != h
        || shadow.width != w
        || shadow.height != h
        || alpha.len() != w * h
    {
        return Err(Error::Dimension(format!(
            "composite inputs disagree: bg {w}x{h}, fg {}x{}, shadow {}x{}, alpha {}",
            foreground.width,
            foreground.height,
            shadow.width,
            shadow.height,
            alpha.len()
        )));
    }
    if gamma <= 0.0 || exposure <= 0.0 {
        return Err(Error::Invalid(format!(
            "exposure and gamma must be positive, got {exposure} and {gamma}"
        )));
    }
    let mut out = ImageRgb::new(w, h);
    for i in 0..w * h {
        let fg = tone_map(foreground.data[i], exposure, gamma);
        let a = alpha[i].clamp(0.0, 1.0);
        let s = shadow.data[i];
        let bg = background.data[i];
        out.data[i] = std::array::from_fn(|c| fg[c] * a + bg[c] * s * (1.0 - a));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_gray(w: usize, h: usize, v: f64) -> ImageGray {
        ImageGray {
            width: w,
            height: h,
            data: vec![v; w * h],
        }
    }

    #[test]
    fn opaque_pixel_shows_tone_mapped_foreground() {
        let fg = ImageRgb::filled(2, 2, [0.25, 1.0, 4.0]);
        let bg = ImageRgb::filled(2, 2, [0.9; 3]);
        let out = composite(&fg, &[1.0; 4], &flat_gray(2, 2, 0.3), &bg, 1.0, 2.0).unwrap();
        for px in &out.data {
            assert!((px[0] - 0.5).abs() < 1e-12);
            assert!((px[1] - 1.0).abs() < 1e-12);
            assert!((px[2] - 1.0).abs() < 1e-12); // clamped
        }
    }

    #[test]
    fn transparent_pixel_shows_shadowed_background() {
        let fg = ImageRgb::filled(2, 2, [1.0; 3]);
        let bg = ImageRgb::filled(2, 2, [0.8, 0.6, 0.4]);
        let out = composite(&fg, &[0.0; 4], &flat_gray(2, 2, 0.5), &bg, 1.0, 2.2).unwrap();
        for px in &out.data {
            assert!((px[0] - 0.4).abs() < 1e-12);
            assert!((px[1] - 0.3).abs() < 1e-12);
            assert!((px[2] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let fg = ImageRgb::filled(2, 2, [1.0; 3]);
        let bg = ImageRgb::filled(3, 2, [1.0; 3]);
        assert!(composite(&fg, &[1.0; 4], &flat_gray(2, 2, 1.0), &bg, 1.0, 2.2).is_err());
    }

    #[test]
    fn exposure_scales_before_gamma() {
        let x = tone_map([0.125, 0.0, 0.0], 2.0, 3.0);
        assert!((x[0] - 0.25f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(x[1], 0.0);
    }
}
