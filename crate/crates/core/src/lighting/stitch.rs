//! Fisheye-pair → equirectangular LDR panorama. Per panorama texel the world
//! direction is looked up in both cameras; inside the shared wedge the two
//! samples are blended with angular feathering (weight = angular distance to
//! each camera's field-of-view rim).

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::math::Vec3;

use super::equirect;
use super::fisheye::FisheyeImage;

/// Low-dynamic-range equirectangular panorama in the world frame.
#[derive(Debug, Clone)]
pub struct PanoramaLdr {
    pub image: ImageRgb,
    pub capture_position: Vec3,
}

/// Stitch two fisheye captures into a W×H = 2H×H panorama. The capture
/// position of the result is the midpoint of the two camera positions.
/// Directions seen by neither camera are a coverage gap and abort with the
/// uncovered solid angle.
pub fn stitch_panorama(
    left: &FisheyeImage,
    right: &FisheyeImage,
    height: usize,
) -> Result<PanoramaLdr> {
    left.validate()?;
    right.validate()?;
    if height == 0 {
        return Err(Error::Invalid("panorama height must be positive".into()));
    }
    let width = 2 * height;
    let mut image = ImageRgb::new(width, height);
    let mut gap_solid_angle = 0.0;
    for row in 0..height {
        let dw = equirect::texel_solid_angle(width, height, row);
        for col in 0..width {
            let dir = equirect::texel_direction(width, height, col, row);
            match blend(left, right, dir) {
                Some(px) => image.set(col, row, px),
                None => gap_solid_angle += dw,
            }
        }
    }
    if gap_solid_angle > 0.0 {
        return Err(Error::Invalid(format!(
            "fisheye pair leaves {gap_solid_angle:.6} sr of the sphere uncovered"
        )));
    }
    Ok(PanoramaLdr {
        image,
        capture_position: (left.position + right.position) * 0.5,
    })
}

/// Feathered two-camera sample of one direction.
fn blend(left: &FisheyeImage, right: &FisheyeImage, dir: Vec3) -> Option<[f64; 3]> {
    let mut samples: [Option<([f64; 3], f64)>; 2] = [None, None];
    for (slot, cam) in samples.iter_mut().zip([left, right]) {
        if let Some(px) = cam.sample(dir) {
            // angular margin to the field-of-view rim
            let margin = (cam.fov / 2.0 - cam.incidence(dir)).max(0.0);
            *slot = Some((px, margin));
        }
    }
    match samples {
        [Some((a, wa)), Some((b, wb))] => {
            let sum = wa + wb;
            // both exactly on their rim: equal-weight average
            let t = if sum > 0.0 { wa / sum } else { 0.5 };
            Some([
                a[0] * t + b[0] * (1.0 - t),
                a[1] * t + b[1] * (1.0 - t),
                a[2] * t + b[2] * (1.0 - t),
            ])
        }
        [Some((a, _)), None] => Some(a),
        [None, Some((b, _))] => Some(b),
        [None, None] => None,
    }
}

/// Fraction of panorama texels with any channel at or above `threshold`;
/// overexposure diagnostic recorded per environment map.
pub fn saturation_fraction(pano: &PanoramaLdr, threshold: f64) -> f64 {
    let n = pano.image.data.len();
    if n == 0 {
        return 0.0;
    }
    let hot = pano
        .image
        .data
        .iter()
        .filter(|px| px.iter().any(|&c| c >= threshold))
        .count();
    hot as f64 / n as f64
}
