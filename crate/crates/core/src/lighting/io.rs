//! On-disk formats for lighting inputs and outputs: fisheye captures as PNG
//! plus a JSON calibration sidecar, environment maps as PFM plus a JSON pose
//! sidecar. The sidecar lives next to the image with an added `.json` suffix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io;
use crate::math::{Quat, Vec3};
use crate::render::EnvironmentMap;

use super::fisheye::FisheyeImage;

/// Sidecar path of an image: `foo.png` → `foo.png.json`.
fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut os = image_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Calibration and placement written next to a fisheye PNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisheyeSidecar {
    pub fov_deg: f64,
    /// Pixels per radian of the equidistant model.
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera frame → world.
    pub orientation: Quat,
    pub position: Vec3,
}

fn read_sidecar<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, "json", e.to_string()))
}

fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path, "json", e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a fisheye capture from `foo.png` + `foo.png.json`.
pub fn read_fisheye(image_path: &Path) -> Result<FisheyeImage> {
    let image = image_io::read_png(image_path)?;
    let side: FisheyeSidecar = read_sidecar(&sidecar_path(image_path))?;
    let cam = FisheyeImage {
        image,
        fov: side.fov_deg.to_radians(),
        f: side.f,
        cx: side.cx,
        cy: side.cy,
        orientation: side.orientation.to_matrix(),
        position: side.position,
    };
    cam.validate()?;
    Ok(cam)
}

/// Write a fisheye capture (quantizes the image to 8-bit PNG).
pub fn write_fisheye(image_path: &Path, cam: &FisheyeImage) -> Result<()> {
    cam.validate()?;
    image_io::write_png(image_path, &cam.image)?;
    let side = FisheyeSidecar {
        fov_deg: cam.fov.to_degrees(),
        f: cam.f,
        cx: cam.cx,
        cy: cam.cy,
        orientation: Quat::from_matrix(&cam.orientation),
        position: cam.position,
    };
    write_sidecar(&sidecar_path(image_path), &side)
}

/// Pose written next to an environment-map PFM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvmapSidecar {
    pub capture_position: Vec3,
    /// Map frame → world.
    pub orientation: Quat,
}

/// Write an environment map as `foo.pfm` + `foo.pfm.json`.
pub fn write_envmap(image_path: &Path, env: &EnvironmentMap) -> Result<()> {
    image_io::write_pfm(image_path, &env.radiance)?;
    let side = EnvmapSidecar {
        capture_position: env.capture_position,
        orientation: Quat::from_matrix(&env.orientation),
    };
    write_sidecar(&sidecar_path(image_path), &side)
}

/// Load an environment map from `foo.pfm` + `foo.pfm.json`.
pub fn read_envmap(image_path: &Path) -> Result<EnvironmentMap> {
    let radiance = image_io::read_pfm(image_path)?;
    let side: EnvmapSidecar = read_sidecar(&sidecar_path(image_path))?;
    EnvironmentMap::new(radiance, side.capture_position, side.orientation.to_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::ImageRgb;
    use crate::math::{vec3, Mat3};

    fn tilted() -> Mat3 {
        // rotation about +z by 30 degrees
        let (s, c) = 30f64.to_radians().sin_cos();
        Mat3::from_rows(vec3(c, -s, 0.0), vec3(s, c, 0.0), vec3(0.0, 0.0, 1.0))
    }

    #[test]
    fn quat_round_trips_rotation() {
        let m = tilted();
        let back = Quat::from_matrix(&m).to_matrix();
        for r in 0..3 {
            for c in 0..3 {
                assert!((m.rows[r][c] - back.rows[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fisheye_round_trip_preserves_calibration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.png");
        let cam = FisheyeImage {
            image: ImageRgb::filled(32, 32, [0.25, 0.5, 0.75]),
            fov: 195f64.to_radians(),
            f: 9.0,
            cx: 16.0,
            cy: 15.5,
            orientation: tilted(),
            position: vec3(1.0, -2.0, 0.5),
        };
        write_fisheye(&path, &cam).unwrap();
        let back = read_fisheye(&path).unwrap();
        assert!((back.fov - cam.fov).abs() < 1e-12);
        assert!((back.f - cam.f).abs() < 1e-12);
        assert!((back.cx - cam.cx).abs() < 1e-12);
        assert!((back.cy - cam.cy).abs() < 1e-12);
        assert!((back.position - cam.position).norm() < 1e-12);
        // image went through 8-bit quantization
        let px = back.image.get(3, 7);
        for (got, want) in px.iter().zip([0.25, 0.5, 0.75]) {
            assert!((got - want).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn envmap_round_trip_is_exact_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.pfm");
        let mut radiance = ImageRgb::filled(16, 8, [0.5; 3]);
        radiance.set(5, 2, [12.25, 0.125, 3.5]);
        let env =
            EnvironmentMap::new(radiance, vec3(4.0, 5.0, 6.0), tilted()).unwrap();
        write_envmap(&path, &env).unwrap();
        let back = read_envmap(&path).unwrap();
        assert_eq!(back.radiance.get(5, 2), [12.25, 0.125, 3.5]);
        assert!((back.capture_position - env.capture_position).norm() < 1e-12);
        assert!(
            (back.orientation.rows[0][1] - env.orientation.rows[0][1]).abs() < 1e-12
        );
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lone.png");
        image_io::write_png(&path, &ImageRgb::filled(4, 4, [0.0; 3])).unwrap();
        assert!(read_fisheye(&path).is_err());
    }
}
