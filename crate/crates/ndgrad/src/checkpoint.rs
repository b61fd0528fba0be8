//! On-disk parameter checkpoints: `manifest.json` plus `params.bin`, the latter
//! holding every block's values as little-endian `f32` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "params.bin";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) into the data file.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub version: u64,
    pub blocks: Vec<BlockEntry>,
    /// Free-form metadata owned by the caller (e.g. pre-training mode, transfer policy).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save<T: Real>(dir: &Path, params: &ParamSet<T>, version: u64, metadata: serde_json::Value) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut blocks = Vec::with_capacity(params.len());
    let mut bytes = Vec::with_capacity(params.num_values() * 4);
    let mut offset = 0;
    for (name, t) in params.iter() {
        blocks.push(BlockEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &v in t.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f32".into(),
        version,
        blocks,
        metadata,
    };
    let mut data = fs::File::create(dir.join(DATA_FILE))?;
    data.write_all(&bytes)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load<T: Real>(dir: &Path) -> Result<(Manifest, ParamSet<T>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bytes = fs::read(dir.join(DATA_FILE))?;
    let mut params = ParamSet::new();
    for entry in &manifest.blocks {
        let len: usize = entry.shape.iter().product();
        let (start, end) = (entry.offset * 4, (entry.offset + len) * 4);
        let raw = bytes.get(start..end).ok_or_else(|| {
            Error::Checkpoint(format!("data file too short for block `{}`", entry.name))
        })?;
        let values = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), values)?)?;
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::<f32>::new();
        p.insert("conv1/w", Tensor::from_fn(&[2, 2, 1, 3], |i| i as f32 * 0.37 - 1.0)).unwrap();
        p.insert("fc1/b", Tensor::from_fn(&[5], |i| (i as f32).sin())).unwrap();
        let meta = serde_json::json!({"mode": "sl"});
        save(dir.path(), &p, 42, meta.clone()).unwrap();
        let (m, q) = load::<f32>(dir.path()).unwrap();
        assert_eq!(q, p);
        assert_eq!(m.version, 42);
        assert_eq!(m.metadata, meta);
        let raw = std::fs::read(dir.path().join(DATA_FILE)).unwrap();
        assert_eq!(raw.len(), (12 + 5) * 4);
        assert_eq!(&raw[4..8], &(0.37f32 - 1.0).to_le_bytes());
    }

    #[test]
    fn truncated_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::full(&[4], 1.0)).unwrap();
        save(dir.path(), &p, 0, serde_json::Value::Null).unwrap();
        std::fs::write(dir.path().join(DATA_FILE), [0u8; 6]).unwrap();
        assert!(load::<f32>(dir.path()).is_err());
    }
}
