//! Spatially varying lighting by nearest capture: pick the environment map
//! whose capture position is closest to the insertion point.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::EnvironmentMap;

/// Index of the environment map captured nearest to `point`; ties keep the
/// earliest map.
pub fn select_envmap(maps: &[EnvironmentMap], point: Vec3) -> Result<usize> {
    if maps.is_empty() {
        return Err(Error::Empty("no environment maps to select from".into()));
    }
    let mut best = 0;
    let mut best_d = maps[0].capture_position.distance(point);
    for (i, m) in maps.iter().enumerate().skip(1) {
        let d = m.capture_position.distance(point);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}
