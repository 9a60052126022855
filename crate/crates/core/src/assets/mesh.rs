use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

/// A contiguous run of triangles sharing one material index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub material_index: u32,
    /// First face of the run.
    pub face_start: usize,
    pub face_count: usize,
}

/// Indexed triangle mesh. Each triangle corner is a `[position, normal, uv]`
/// index triple into the attribute arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<Vec2>,
    pub triangles: Vec<[[u32; 3]; 3]>,
    pub groups: Vec<Group>,
}

impl TriangleMesh {
    /// Check all structural invariants: index bounds, disjoint group ranges
    /// covering every face.
    pub fn validate(&self) -> Result<()> {
        for (fi, tri) in self.triangles.iter().enumerate() {
            for corner in tri {
                let [vi, ni, ti] = *corner;
                if vi as usize >= self.vertices.len() {
                    return Err(Error::Invalid(format!(
                        "triangle {fi}: vertex index {vi} out of bounds ({} vertices)",
                        self.vertices.len()
                    )));
                }
                if ni as usize >= self.normals.len() {
                    return Err(Error::Invalid(format!(
                        "triangle {fi}: normal index {ni} out of bounds ({} normals)",
                        self.normals.len()
                    )));
                }
                if ti as usize >= self.uvs.len() {
                    return Err(Error::Invalid(format!(
                        "triangle {fi}: uv index {ti} out of bounds ({} uvs)",
                        self.uvs.len()
                    )));
                }
            }
        }

        let mut covered = vec![false; self.triangles.len()];
        for g in &self.groups {
            let end = g.face_start.checked_add(g.face_count).ok_or_else(|| {
                Error::Invalid(format!("group `{}`: face range overflows", g.name))
            })?;
            if end > self.triangles.len() {
                return Err(Error::Invalid(format!(
                    "group `{}`: face range [{}, {}) exceeds {} triangles",
                    g.name,
                    g.face_start,
                    end,
                    self.triangles.len()
                )));
            }
            for slot in &mut covered[g.face_start..end] {
                if *slot {
                    return Err(Error::Invalid(format!(
                        "group `{}`: face range overlaps another group",
                        g.name
                    )));
                }
                *slot = true;
            }
        }
        if let Some(face) = covered.iter().position(|c| !c) {
            return Err(Error::Invalid(format!(
                "triangle {face} is not covered by any group"
            )));
        }
        Ok(())
    }

    /// Distinct material indices used by the groups, ascending.
    pub fn material_indices(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.groups.iter().map(|g| g.material_index).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Material index of a face, by group lookup.
    pub fn face_material(&self, face: usize) -> Option<u32> {
        self.groups
            .iter()
            .find(|g| face >= g.face_start && face < g.face_start + g.face_count)
            .map(|g| g.material_index)
    }

    /// Axis-aligned bounds; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.vertices.iter();
        let first = *it.next()?;
        let mut lo = first;
        let mut hi = first;
        for v in it {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            lo.z = lo.z.min(v.z);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
            hi.z = hi.z.max(v.z);
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{vec2, vec3};

    pub fn tri_mesh_one() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                vec3(0.0, 0.0, 0.0),
                vec3(1.0, 0.0, 0.0),
                vec3(0.0, 1.0, 0.0),
            ],
            normals: vec![vec3(0.0, 0.0, 1.0)],
            uvs: vec![vec2(0.0, 0.0), vec2(1.0, 0.0), vec2(0.0, 1.0)],
            triangles: vec![[[0, 0, 0], [1, 0, 1], [2, 0, 2]]],
            groups: vec![Group {
                name: "body".into(),
                material_index: 0,
                face_start: 0,
                face_count: 1,
            }],
        }
    }

    #[test]
    fn valid_mesh_passes() {
        tri_mesh_one().validate().unwrap();
    }

    #[test]
    fn out_of_bounds_index_rejected() {
        let mut m = tri_mesh_one();
        m.triangles[0][2][0] = 9;
        assert!(m.validate().is_err());
    }

    #[test]
    fn overlapping_groups_rejected() {
        let mut m = tri_mesh_one();
        m.groups.push(Group {
            name: "dup".into(),
            material_index: 1,
            face_start: 0,
            face_count: 1,
        });
        assert!(m.validate().is_err());
    }

    #[test]
    fn uncovered_face_rejected() {
        let mut m = tri_mesh_one();
        m.groups[0].face_count = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn material_indices_deduped() {
        let mut m = tri_mesh_one();
        m.triangles.push(m.triangles[0]);
        m.groups[0].face_count = 1;
        m.groups.push(Group {
            name: "glass".into(),
            material_index: 3,
            face_start: 1,
            face_count: 1,
        });
        assert_eq!(m.material_indices(), vec![0, 3]);
        assert_eq!(m.face_material(1), Some(3));
    }
}
