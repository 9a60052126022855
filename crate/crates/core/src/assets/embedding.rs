//! Embedding storage: one contiguous little-endian f32 binary holding all
//! vectors, plus a JSON sidecar mapping id -> (offset in floats, dim).
//! Vectors are unit-normalized at load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// Unit-normalize; errors on empty, non-finite or zero vectors.
    pub fn normalized(id: String, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid(format!("embedding `{id}` has dimension 0")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "embedding `{id}` contains non-finite values"
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Invalid(format!("embedding `{id}` is the zero vector")));
        }
        Ok(EmbeddingVector {
            id,
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarEntry {
    id: String,
    /// Offset into the binary, counted in floats.
    offset: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    entries: Vec<SidecarEntry>,
}

/// Load all embeddings named by `index_path` from `bin_path`.
pub fn load_embeddings(
    bin_path: &Path,
    index_path: &Path,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let raw = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    if raw.len() % 4 != 0 {
        return Err(Error::parse(
            bin_path,
            "binary",
            "length is not a multiple of 4 bytes",
        ));
    }
    let floats: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let text = std::fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::parse(index_path, "sidecar", e.to_string()))?;

    let mut out = BTreeMap::new();
    for entry in sidecar.entries {
        let end = entry.offset.checked_add(entry.dim).filter(|&e| e <= floats.len());
        let Some(end) = end else {
            return Err(Error::parse(
                index_path,
                format!("entry `{}`", entry.id),
                format!(
                    "range [{}, {}+{}) exceeds binary of {} floats",
                    entry.offset,
                    entry.offset,
                    entry.dim,
                    floats.len()
                ),
            ));
        };
        let values: Vec<f64> = floats[entry.offset..end].iter().map(|&v| v as f64).collect();
        let vector = EmbeddingVector::normalized(entry.id.clone(), values)?;
        if out.insert(entry.id.clone(), vector).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate embedding id `{}`",
                entry.id
            )));
        }
    }
    Ok(out)
}

/// Write embeddings as binary + sidecar (test and fixture helper).
pub fn write_embeddings(
    bin_path: &Path,
    index_path: &Path,
    vectors: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut raw: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (id, values) in vectors {
        entries.push(SidecarEntry {
            id: id.clone(),
            offset,
            dim: values.len(),
        });
        for v in values {
            raw.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += values.len();
    }
    std::fs::write(bin_path, raw).map_err(|e| Error::io(bin_path, e))?;
    let text = serde_json::to_string_pretty(&Sidecar { entries })
        .map_err(|e| Error::parse(index_path, "sidecar", e.to_string()))?;
    std::fs::write(index_path, text).map_err(|e| Error::io(index_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_three_four() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        let idx = dir.path().join("e.json");
        write_embeddings(&bin, &idx, &[("a".into(), vec![3.0, 4.0])]).unwrap();
        let map = load_embeddings(&bin, &idx).unwrap();
        let v = &map["a"].values;
        assert!((v[0] - 0.6).abs() < 1e-7);
        assert!((v[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn loaded_vectors_are_unit() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        let idx = dir.path().join("e.json");
        let vs: Vec<(String, Vec<f64>)> = (0..5)
            .map(|i| {
                (
                    format!("v{i}"),
                    (0..8).map(|j| ((i * 8 + j) as f64).sin() + 0.01).collect(),
                )
            })
            .collect();
        write_embeddings(&bin, &idx, &vs).unwrap();
        for v in load_embeddings(&bin, &idx).unwrap().values() {
            let n: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingVector::normalized("z".into(), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn out_of_range_entry_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        let idx = dir.path().join("e.json");
        std::fs::write(&bin, [0u8; 8]).unwrap();
        std::fs::write(
            &idx,
            r#"{"entries":[{"id":"a","offset":0,"dim":5}]}"#,
        )
        .unwrap();
        assert!(load_embeddings(&bin, &idx).is_err());
    }
}
