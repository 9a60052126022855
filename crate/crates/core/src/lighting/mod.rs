//! Environment lighting estimation: fisheye-pair stitching into LDR
//! panoramas, LDR→HDR sky reconstruction, sky/ground composition with value
//! alignment, and nearest-capture environment map selection.

pub mod equirect;
mod fisheye;
mod io;
mod select;
mod sky;
mod stitch;

pub use fisheye::{render_fisheye, FisheyeImage};
pub use io::{
    read_envmap, read_fisheye, write_envmap, write_fisheye, EnvmapSidecar, FisheyeSidecar,
};
pub use select::select_envmap;
pub use sky::{compose_envmap, ldr_to_hdr_sky, SkyModelParams};
pub use stitch::{saturation_fraction, stitch_panorama, PanoramaLdr};
