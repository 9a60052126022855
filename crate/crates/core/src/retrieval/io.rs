//! On-disk formats for recognition artifacts. Masks are 8-bit 0/255 PNGs with
//! a JSON sidecar carrying {label, confidence, view_index}; feature maps are a
//! 12-byte header (width, height, channels as little-endian u32) followed by
//! planar little-endian f32 data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::{read_mask_png, write_mask_png};
use crate::img::Planes;

use super::{FeatureMap, FeatureSource, SegmentationMask};

#[derive(Serialize, Deserialize)]
struct MaskSidecar {
    label: String,
    confidence: f64,
    view_index: usize,
}

fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("json")
}

/// Read a mask PNG plus its sidecar (same stem, `.json` extension).
pub fn read_mask(png_path: &Path) -> Result<SegmentationMask> {
    let (width, height, bits) = read_mask_png(png_path)?;
    let side = sidecar_path(png_path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: MaskSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&side, "mask sidecar", e.to_string()))?;
    SegmentationMask::new(
        width,
        height,
        bits,
        sidecar.label,
        sidecar.confidence,
        sidecar.view_index,
    )
}

pub fn write_mask(png_path: &Path, mask: &SegmentationMask) -> Result<()> {
    write_mask_png(png_path, mask.width, mask.height, &mask.bits)?;
    let side = sidecar_path(png_path);
    let sidecar = MaskSidecar {
        label: mask.label.clone(),
        confidence: mask.confidence,
        view_index: mask.view_index,
    };
    let mut text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::parse(&side, "mask sidecar", e.to_string()))?;
    text.push('\n');
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Read a planar f32 feature map; values must be finite.
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() < 12 {
        return Err(Error::parse(path, "feature map", "missing 12-byte header"));
    }
    let field = |i: usize| u32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (width, height, channels) = (field(0), field(1), field(2));
    let expected = 12 + width * height * channels * 4;
    if raw.len() != expected {
        return Err(Error::parse(
            path,
            "feature map",
            format!(
                "{}x{}x{} needs {expected} bytes, file has {}",
                width,
                height,
                channels,
                raw.len()
            ),
        ));
    }
    let data: Vec<f64> = raw[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(path, "feature map", "non-finite values"));
    }
    Ok(FeatureMap {
        planes: Planes {
            width,
            height,
            channels,
            data,
        },
        source: FeatureSource::Ingested,
    })
}

pub fn write_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    let p = &map.planes;
    let mut raw = Vec::with_capacity(12 + p.data.len() * 4);
    for v in [p.width as u32, p.height as u32, p.channels as u32] {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    for v in &p.data {
        raw.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, raw).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("windows_v2.png");
        let mask = SegmentationMask::new(
            3,
            2,
            vec![true, false, true, false, true, false],
            "windows".into(),
            0.75,
            2,
        )
        .unwrap();
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn feature_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fmap");
        let map = FeatureMap {
            planes: Planes {
                width: 2,
                height: 3,
                channels: 2,
                data: (0..12).map(|i| i as f64 * 0.25 - 1.0).collect(),
            },
            source: FeatureSource::Ingested,
        };
        write_feature_map(&path, &map).unwrap();
        let back = read_feature_map(&path).unwrap();
        assert_eq!(back.planes, map.planes);
        assert_eq!(back.source, FeatureSource::Ingested);
    }

    #[test]
    fn truncated_feature_map_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmap");
        let mut raw = Vec::new();
        for v in [4u32, 4, 2] {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        raw.extend_from_slice(&[0u8; 16]); // far fewer than 4*4*2 floats
        std::fs::write(&path, raw).unwrap();
        assert!(read_feature_map(&path).is_err());
    }

    #[test]
    fn non_finite_feature_map_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.fmap");
        let mut raw = Vec::new();
        for v in [1u32, 1, 1] {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        raw.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, raw).unwrap();
        assert!(read_feature_map(&path).is_err());
    }
}
