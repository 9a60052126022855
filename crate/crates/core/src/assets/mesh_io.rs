//! Canonical structured-text mesh format. The writer emits a fixed pretty
//! JSON layout, so `write(read(f))` is byte-identical for files already in
//! canonical form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{vec2, vec3};

use super::mesh::{Group, TriangleMesh};
use super::obj::read_obj;

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    vertices: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    uvs: Vec<[f64; 2]>,
    triangles: Vec<[[u32; 3]; 3]>,
    groups: Vec<GroupDoc>,
}

#[derive(Serialize, Deserialize)]
struct GroupDoc {
    name: String,
    material_index: u32,
    faces: [usize; 2],
}

pub fn read_mesh_json(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: MeshDoc =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, "mesh", e.to_string()))?;
    let mesh = TriangleMesh {
        vertices: doc.vertices.iter().map(|v| vec3(v[0], v[1], v[2])).collect(),
        normals: doc.normals.iter().map(|v| vec3(v[0], v[1], v[2])).collect(),
        uvs: doc.uvs.iter().map(|v| vec2(v[0], v[1])).collect(),
        triangles: doc.triangles,
        groups: doc
            .groups
            .into_iter()
            .map(|g| Group {
                name: g.name,
                material_index: g.material_index,
                face_start: g.faces[0],
                face_count: g.faces[1],
            })
            .collect(),
    };
    mesh.validate()
        .map_err(|e| Error::parse(path, "mesh", e.to_string()))?;
    Ok(mesh)
}

pub fn write_mesh_json(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    mesh.validate()?;
    let doc = MeshDoc {
        vertices: mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
        normals: mesh.normals.iter().map(|v| [v.x, v.y, v.z]).collect(),
        uvs: mesh.uvs.iter().map(|v| [v.x, v.y]).collect(),
        triangles: mesh.triangles.clone(),
        groups: mesh
            .groups
            .iter()
            .map(|g| GroupDoc {
                name: g.name.clone(),
                material_index: g.material_index,
                faces: [g.face_start, g.face_count],
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::parse(path, "mesh", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a mesh by extension: `.json` for the canonical schema, `.obj` for the
/// OBJ ingestion subset.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_mesh_json(path),
        Some("obj") => read_obj(path),
        other => Err(Error::parse(
            path,
            "mesh",
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{vec2, vec3};

    /// 10-triangle fixture: a fan split into two groups.
    fn fixture() -> TriangleMesh {
        let mut vertices = vec![vec3(0.0, 0.0, 0.0)];
        for i in 0..11 {
            let a = i as f64 * 0.3;
            vertices.push(vec3(a.cos(), a.sin(), 0.125 * i as f64));
        }
        let uvs: Vec<_> = vertices.iter().map(|v| vec2(v.x * 0.5, v.y * 0.5)).collect();
        let triangles: Vec<[[u32; 3]; 3]> = (0..10)
            .map(|i| {
                [
                    [0, 0, 0],
                    [i as u32 + 1, 0, i as u32 + 1],
                    [i as u32 + 2, 0, i as u32 + 2],
                ]
            })
            .collect();
        TriangleMesh {
            vertices,
            normals: vec![vec3(0.0, 0.0, 1.0)],
            uvs,
            triangles,
            groups: vec![
                Group {
                    name: "body".into(),
                    material_index: 0,
                    face_start: 0,
                    face_count: 6,
                },
                Group {
                    name: "glass".into(),
                    material_index: 2,
                    face_start: 6,
                    face_count: 4,
                },
            ],
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mesh = fixture();
        write_mesh_json(&path, &mesh).unwrap();
        let back = read_mesh_json(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        write_mesh_json(&p1, &fixture()).unwrap();
        let mesh = read_mesh_json(&p1).unwrap();
        write_mesh_json(&p2, &mesh).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn single_triangle_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(
            &path,
            r#"{
  "vertices": [[0,0,0],[1,0,0],[0,1,0]],
  "normals": [[0,0,1]],
  "uvs": [[0,0],[1,0],[0,1]],
  "triangles": [[[0,0,0],[1,0,1],[2,0,2]]],
  "groups": [{"name":"g","material_index":0,"faces":[0,1]}]
}"#,
        )
        .unwrap();
        let mesh = read_mesh_json(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.groups.len(), 1);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(
            &path,
            r#"{
  "vertices": [[0,0,0],[1,0,0],[0,1,0]],
  "normals": [[0,0,1]],
  "uvs": [[0,0],[1,0],[0,1]],
  "triangles": [[[0,0,0],[1,0,1],[2,0,2]]],
  "groups": [{"name":"a","material_index":0,"faces":[0,1]},
             {"name":"b","material_index":1,"faces":[0,1]}]
}"#,
        )
        .unwrap();
        let err = read_mesh_json(&path).unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }
}
