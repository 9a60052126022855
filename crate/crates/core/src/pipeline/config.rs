//! Run configuration: one JSON file naming every input artifact plus the
//! stage parameters. Relative paths are resolved against the config file's
//! directory, and every referenced file must exist before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lighting::SkyModelParams;
use crate::math::{Quat, Rigid, Vec3};
use crate::matopt::{LossWeights, OptimizeConfig};
use crate::render::CameraModel;

/// Rigid placement as stored on disk: unit quaternion plus translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSpec {
    #[serde(default = "quat_identity")]
    pub rotation: Quat,
    #[serde(default = "vec3_zero")]
    pub translation: Vec3,
}

fn quat_identity() -> Quat {
    Quat::IDENTITY
}

fn vec3_zero() -> Vec3 {
    Vec3::ZERO
}

impl Default for PoseSpec {
    fn default() -> Self {
        PoseSpec {
            rotation: Quat::IDENTITY,
            translation: Vec3::ZERO,
        }
    }
}

impl PoseSpec {
    pub fn to_rigid(&self) -> Rigid {
        Rigid::new(self.rotation.to_matrix(), self.translation)
    }
}

/// Pinhole camera as stored on disk; `pose` is world → camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: PoseSpec,
}

impl CameraSpec {
    pub fn to_camera(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            pose: self.pose.to_rigid(),
        }
    }
}

/// One background frame to insert into.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSpec {
    /// Background photograph (PNG).
    pub background: PathBuf,
    pub camera: CameraSpec,
    /// Model → world placement of the inserted vehicle.
    #[serde(default)]
    pub insertion: PoseSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Directory containing the CAD library `manifest.json`.
    pub library: PathBuf,
    /// Reference vehicle photograph (PNG).
    pub reference_image: PathBuf,
    /// Camera that took the reference photograph.
    pub reference_camera: CameraSpec,
    /// Base model → world placement in the reference scene; the pose grid
    /// rotates this about world +z.
    #[serde(default)]
    pub reference_insertion: PoseSpec,
    /// Component masks on the reference image (PNG + JSON sidecar each).
    pub masks: Vec<PathBuf>,
    /// Query embedding, same binary + index format as the library embeddings.
    pub query_embedding_bin: PathBuf,
    pub query_embedding_index: PathBuf,
    /// Id inside the query index; defaults to its first entry.
    #[serde(default)]
    pub query_id: Option<String>,
    /// Fisheye capture pairs (left, right), each a PNG + JSON sidecar.
    pub fisheye_pairs: Vec<(PathBuf, PathBuf)>,
    pub frames: Vec<FrameSpec>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    /// Yaw grid spacing in degrees for pose matching; must divide 360.
    #[serde(default = "default_pose_grid")]
    pub pose_grid_degrees: u32,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub sky: SkyModelParams,
    /// Painted vs unpainted body prior.
    #[serde(default = "default_true")]
    pub body_painted: bool,
    /// Merge leftover material indices into the body by feature
    /// correspondence (needs a whole-vehicle mask labeled `car`).
    #[serde(default)]
    pub merge_leftover: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_exposure")]
    pub exposure: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Height of the stitched panorama / environment maps.
    #[serde(default = "default_pano_height")]
    pub pano_height: usize,
}

fn default_pose_grid() -> u32 {
    5
}

fn default_iou() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_exposure() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    2.2
}

fn default_pano_height() -> usize {
    64
}

impl PipelineConfig {
    /// Resolve every relative path against `base` (the config directory).
    pub fn resolved(mut self, base: &Path) -> PipelineConfig {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(p.as_path());
            }
        };
        fix(&mut self.library);
        fix(&mut self.reference_image);
        for m in &mut self.masks {
            fix(m);
        }
        fix(&mut self.query_embedding_bin);
        fix(&mut self.query_embedding_index);
        for (l, r) in &mut self.fisheye_pairs {
            fix(l);
            fix(r);
        }
        for f in &mut self.frames {
            fix(&mut f.background);
        }
        fix(&mut self.output_dir);
        self
    }

    /// Check parameters and the existence of every referenced file. Runs
    /// before any compute; a missing input is caught here.
    pub fn validate(&self) -> Result<()> {
        if self.pose_grid_degrees == 0 || 360 % self.pose_grid_degrees != 0 {
            return Err(Error::Invalid(format!(
                "pose grid spacing {}° must divide 360",
                self.pose_grid_degrees
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "iou threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if self.exposure <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::Invalid(format!(
                "exposure {} and gamma {} must be positive",
                self.exposure, self.gamma
            )));
        }
        if self.pano_height == 0 {
            return Err(Error::Invalid("panorama height must be positive".into()));
        }
        self.weights.validate()?;
        self.optimize.validate()?;
        self.sky.validate()?;
        if self.masks.is_empty() {
            return Err(Error::Empty("no reference masks configured".into()));
        }
        if self.fisheye_pairs.is_empty() {
            return Err(Error::Empty("no fisheye pairs configured".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Empty("no background frames configured".into()));
        }
        self.reference_camera.to_camera().validate()?;
        for f in &self.frames {
            f.camera.to_camera().validate()?;
        }

        require(&self.library.join("manifest.json"))?;
        require(&self.reference_image)?;
        for m in &self.masks {
            require(m)?;
            require(&m.with_extension("json"))?;
        }
        require(&self.query_embedding_bin)?;
        require(&self.query_embedding_index)?;
        for (l, r) in &self.fisheye_pairs {
            for p in [l, r] {
                require(p)?;
                require(&appended_json(p))?;
            }
        }
        for f in &self.frames {
            require(&f.background)?;
        }
        Ok(())
    }
}

/// Sidecar convention of fisheye captures: `foo.png` → `foo.png.json`.
fn appended_json(p: &Path) -> PathBuf {
    let mut os = p.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Invalid(format!(
            "required input {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

/// Read, resolve and validate a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: PipelineConfig =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, "config", e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let config = config.resolved(base);
    config.validate()?;
    Ok(config)
}
