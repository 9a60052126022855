//! Equirectangular (latitude–longitude) pixel grid conventions, shared by the
//! panorama stitcher and the image-based shading loop.
//!
//! For a W×H grid (W = 2H): row r spans polar angle θ ∈ [πr/H, π(r+1)/H]
//! measured from +z (up), so row 0 touches the zenith. Column c is *centered*
//! at azimuth φ = 2πc/W measured from +x toward +y; the seam runs through the
//! left edge of column 0.

use crate::math::{vec3, Vec3};

/// Direction at the center of texel (col, row), in the map's own frame.
pub fn texel_direction(width: usize, height: usize, col: usize, row: usize) -> Vec3 {
    let theta = std::f64::consts::PI * (row as f64 + 0.5) / height as f64;
    let phi = std::f64::consts::TAU * col as f64 / width as f64;
    let (st, ct) = (theta.sin(), theta.cos());
    let (sp, cp) = (phi.sin(), phi.cos());
    vec3(st * cp, st * sp, ct)
}

/// Continuous pixel coordinates of a direction; integer values are texel
/// centers. `col` is in [0, W) after wrapping, `row` in [-0.5, H - 0.5].
pub fn direction_to_pixel(width: usize, height: usize, dir: Vec3) -> (f64, f64) {
    let d = dir.normalized();
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let mut phi = d.y.atan2(d.x);
    if phi < 0.0 {
        phi += std::f64::consts::TAU;
    }
    let col = (phi * width as f64 / std::f64::consts::TAU) % width as f64;
    let row = theta * height as f64 / std::f64::consts::PI - 0.5;
    (col, row)
}

/// Nearest texel for a direction.
pub fn nearest_texel(width: usize, height: usize, dir: Vec3) -> (usize, usize) {
    let (col, row) = direction_to_pixel(width, height, dir);
    let c = (col.round() as usize) % width;
    let r = (row.round().max(0.0) as usize).min(height - 1);
    (c, r)
}

/// Solid angle subtended by any texel in `row`:
/// (2π/W)·(cos θ_top − cos θ_bottom).
pub fn texel_solid_angle(width: usize, height: usize, row: usize) -> f64 {
    let theta_top = std::f64::consts::PI * row as f64 / height as f64;
    let theta_bottom = std::f64::consts::PI * (row as f64 + 1.0) / height as f64;
    std::f64::consts::TAU / width as f64 * (theta_top.cos() - theta_bottom.cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zenith_maps_to_top_row() {
        let (_, r) = nearest_texel(16, 8, vec3(0.0, 0.0, 1.0));
        assert_eq!(r, 0);
        let (_, r) = nearest_texel(16, 8, vec3(0.0, 0.0, -1.0));
        assert_eq!(r, 7);
    }

    #[test]
    fn cardinal_directions_hit_quarter_columns() {
        let (w, h) = (32, 16);
        for (dir, expect_col) in [
            (vec3(1.0, 0.0, 0.0), 0),
            (vec3(0.0, 1.0, 0.0), w / 4),
            (vec3(-1.0, 0.0, 0.0), w / 2),
            (vec3(0.0, -1.0, 0.0), 3 * w / 4),
        ] {
            let (col, row) = direction_to_pixel(w, h, dir);
            assert!(
                (col - expect_col as f64).abs() < 1e-12,
                "{dir:?} -> col {col}"
            );
            // equator: between the two middle rows
            assert!((row - (h as f64 - 1.0) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_within_discretization_bound() {
        let (w, h) = (64, 32);
        let bound = std::f64::consts::PI / h as f64;
        for i in 0..500 {
            // deterministic pseudo-random directions
            let a = (i as f64 * 0.61803398875).fract() * std::f64::consts::TAU;
            let b = ((i as f64 * 0.7548776662).fract() * 2.0 - 1.0).clamp(-1.0, 1.0);
            let s = (1.0f64 - b * b).sqrt();
            let d = vec3(s * a.cos(), s * a.sin(), b);
            let (c, r) = nearest_texel(w, h, d);
            let back = texel_direction(w, h, c, r);
            let angle = d.dot(back).clamp(-1.0, 1.0).acos();
            assert!(angle < bound, "dir {d:?}: angle error {angle}");
        }
    }

    #[test]
    fn solid_angles_sum_to_sphere() {
        let (w, h) = (32, 16);
        let total: f64 = (0..h).map(|r| texel_solid_angle(w, h, r) * w as f64).sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn texel_center_round_trips_exactly() {
        let (w, h) = (16, 8);
        for row in 0..h {
            for col in 0..w {
                let d = texel_direction(w, h, col, row);
                assert_eq!(nearest_texel(w, h, d), (col, row));
            }
        }
    }
}
