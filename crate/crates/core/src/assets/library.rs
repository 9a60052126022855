//! Library manifest, loading and the qualification filter. A model is
//! qualified when its groups carry at least two distinct material indices;
//! anything less cannot drive part-aware material assignment. The manifest may
//! override the flag per asset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::embedding::{load_embeddings, EmbeddingVector};
use super::mesh::TriangleMesh;
use super::mesh_io::read_mesh;

#[derive(Debug, Clone)]
pub struct CadAsset {
    pub id: String,
    pub mesh: TriangleMesh,
    pub embedding_id: String,
    pub qualified: bool,
}

#[derive(Debug, Clone)]
pub struct Library {
    pub assets: Vec<CadAsset>,
    pub embeddings: BTreeMap<String, EmbeddingVector>,
    /// Component label -> material graph identifier (path or builtin name).
    pub material_priors: BTreeMap<String, String>,
}

impl Library {
    pub fn embedding_of(&self, asset: &CadAsset) -> &EmbeddingVector {
        &self.embeddings[&asset.embedding_id]
    }

    pub fn asset(&self, id: &str) -> Option<&CadAsset> {
        self.assets.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestAsset {
    pub id: String,
    pub mesh_path: String,
    pub embedding_id: String,
    /// Optional override of the computed qualification flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualified: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub assets: Vec<ManifestAsset>,
    #[serde(default)]
    pub material_priors: BTreeMap<String, String>,
    pub embeddings_bin: String,
    pub embeddings_index: String,
}

/// Load a library rooted at a directory containing `manifest.json`. Mesh and
/// embedding paths are resolved relative to the root.
pub fn load_library(root: &Path) -> Result<Library> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: LibraryManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&manifest_path, "manifest", e.to_string()))?;

    let embeddings = load_embeddings(
        &root.join(&manifest.embeddings_bin),
        &root.join(&manifest.embeddings_index),
    )?;

    let mut seen_ids = BTreeSet::new();
    let mut assets = Vec::with_capacity(manifest.assets.len());
    for entry in manifest.assets {
        if !seen_ids.insert(entry.id.clone()) {
            return Err(Error::Integrity(format!("duplicate asset id `{}`", entry.id)));
        }
        if !embeddings.contains_key(&entry.embedding_id) {
            return Err(Error::Integrity(format!(
                "asset `{}`: embedding id `{}` not found in index",
                entry.id, entry.embedding_id
            )));
        }
        let mesh = read_mesh(&root.join(&entry.mesh_path))?;
        let qualified = entry
            .qualified
            .unwrap_or_else(|| mesh.material_indices().len() >= 2);
        assets.push(CadAsset {
            id: entry.id,
            mesh,
            embedding_id: entry.embedding_id,
            qualified,
        });
    }

    Ok(Library {
        assets,
        embeddings,
        material_priors: manifest.material_priors,
    })
}

/// Restrict a library to its qualified assets, preserving order.
pub fn filter_assets(library: &Library) -> Library {
    Library {
        assets: library
            .assets
            .iter()
            .filter(|a| a.qualified)
            .cloned()
            .collect(),
        embeddings: library.embeddings.clone(),
        material_priors: library.material_priors.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::embedding::write_embeddings;
    use crate::assets::mesh::Group;
    use crate::assets::mesh_io::write_mesh_json;
    use crate::math::{vec2, vec3};

    fn mesh_with_materials(indices: &[u32]) -> TriangleMesh {
        let n = indices.len();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for i in 0..n {
            let base = vertices.len() as u32;
            let off = i as f64;
            vertices.push(vec3(off, 0.0, 0.0));
            vertices.push(vec3(off + 1.0, 0.0, 0.0));
            vertices.push(vec3(off, 1.0, 0.0));
            triangles.push([[base, 0, 0], [base + 1, 0, 1], [base + 2, 0, 2]]);
        }
        TriangleMesh {
            vertices,
            normals: vec![vec3(0.0, 0.0, 1.0)],
            uvs: vec![vec2(0.0, 0.0), vec2(1.0, 0.0), vec2(0.0, 1.0)],
            triangles,
            groups: indices
                .iter()
                .enumerate()
                .map(|(i, &m)| Group {
                    name: format!("g{i}"),
                    material_index: m,
                    face_start: i,
                    face_count: 1,
                })
                .collect(),
        }
    }

    fn write_library(dir: &Path, materials: &[&[u32]]) -> Result<Library> {
        let mut assets = Vec::new();
        let mut vectors = Vec::new();
        for (i, mats) in materials.iter().enumerate() {
            let mesh_path = format!("mesh_{i}.json");
            write_mesh_json(&dir.join(&mesh_path), &mesh_with_materials(mats)).unwrap();
            let eid = format!("e{i}");
            vectors.push((eid.clone(), vec![1.0 + i as f64, 0.5]));
            assets.push(ManifestAsset {
                id: format!("asset_{i}"),
                mesh_path,
                embedding_id: eid,
                qualified: None,
            });
        }
        write_embeddings(&dir.join("emb.bin"), &dir.join("emb.json"), &vectors).unwrap();
        let manifest = LibraryManifest {
            assets,
            material_priors: BTreeMap::new(),
            embeddings_bin: "emb.bin".into(),
            embeddings_index: "emb.json".into(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).unwrap(),
        )
        .unwrap();
        load_library(dir)
    }

    #[test]
    fn empty_manifest_loads_empty_library() {
        let dir = tempfile::tempdir().unwrap();
        let lib = write_library(dir.path(), &[]).unwrap();
        assert!(lib.assets.is_empty());
    }

    #[test]
    fn single_material_asset_is_unqualified() {
        let dir = tempfile::tempdir().unwrap();
        let lib = write_library(dir.path(), &[&[0, 0, 0]]).unwrap();
        assert!(!lib.assets[0].qualified);
    }

    #[test]
    fn filter_keeps_qualified_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let lib = write_library(
            dir.path(),
            &[&[0, 1], &[0, 0], &[0, 2, 3], &[5], &[1, 2]],
        )
        .unwrap();
        let filtered = filter_assets(&lib);
        let ids: Vec<_> = filtered.assets.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, vec!["asset_0", "asset_2", "asset_4"]);
        // idempotent
        let again = filter_assets(&filtered);
        assert_eq!(again.assets.len(), filtered.assets.len());
    }

    #[test]
    fn filter_can_empty_the_library() {
        let dir = tempfile::tempdir().unwrap();
        let lib = write_library(dir.path(), &[&[0], &[7]]).unwrap();
        assert!(filter_assets(&lib).assets.is_empty());
    }

    #[test]
    fn dangling_embedding_id_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        write_mesh_json(&dir.path().join("m.json"), &mesh_with_materials(&[0, 1])).unwrap();
        write_embeddings(
            &dir.path().join("emb.bin"),
            &dir.path().join("emb.json"),
            &[("good".into(), vec![1.0])],
        )
        .unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"assets":[{"id":"a","mesh_path":"m.json","embedding_id":"missing"}],
                "embeddings_bin":"emb.bin","embeddings_index":"emb.json"}"#,
        )
        .unwrap();
        let err = load_library(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn missing_mesh_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_embeddings(
            &dir.path().join("emb.bin"),
            &dir.path().join("emb.json"),
            &[("e".into(), vec![1.0])],
        )
        .unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"assets":[{"id":"a","mesh_path":"gone.json","embedding_id":"e"}],
                "embeddings_bin":"emb.bin","embeddings_index":"emb.json"}"#,
        )
        .unwrap();
        let err = load_library(dir.path()).unwrap_err();
        assert!(err.to_string().contains("gone.json"));
    }

    #[test]
    fn manifest_can_override_qualification() {
        let dir = tempfile::tempdir().unwrap();
        write_mesh_json(&dir.path().join("m.json"), &mesh_with_materials(&[0])).unwrap();
        write_embeddings(
            &dir.path().join("emb.bin"),
            &dir.path().join("emb.json"),
            &[("e".into(), vec![1.0])],
        )
        .unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"assets":[{"id":"a","mesh_path":"m.json","embedding_id":"e","qualified":true}],
                "embeddings_bin":"emb.bin","embeddings_index":"emb.json"}"#,
        )
        .unwrap();
        let lib = load_library(dir.path()).unwrap();
        assert!(lib.assets[0].qualified);
    }
}
