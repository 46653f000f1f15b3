//! Flat little-endian `f32` tensor files with a JSON manifest.
//!
//! `name.bin` holds the raw payloads back to back; `name.json` lists
//! `{name, shape, offset}` per tensor (offset in bytes) plus a free-form
//! provenance string.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    provenance: String,
    tensors: Vec<Entry>,
}

/// Manifest path belonging to a payload path.
pub fn manifest_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_tensors(bin: &Path, provenance: &str, tensors: &[Tensor]) -> Result<()> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        entries.push(Entry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset: payload.len() as u64,
        });
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(bin, payload)?;
    let manifest = Manifest {
        provenance: provenance.to_string(),
        tensors: entries,
    };
    fs::write(manifest_path(bin), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads every tensor listed in the manifest, plus the provenance string.
pub fn read_tensors(bin: &Path) -> Result<(String, Vec<Tensor>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(bin))?)?;
    let payload = fs::read(bin)?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > payload.len() {
            return Err(Error::TensorFile(format!(
                "tensor {} needs bytes {start}..{end}, file has {}",
                e.name,
                payload.len()
            )));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::TensorFile(format!("tensor {} has non-finite value at {bad}", e.name)));
        }
        out.push(Tensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    Ok((manifest.provenance, out))
}

/// Looks up a tensor by name and checks its shape.
pub fn take<'a>(tensors: &'a [Tensor], name: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::TensorFile(format!("missing tensor {name}")))?;
    if t.shape != shape {
        return Err(Error::ShapeMismatch(format!(
            "tensor {name}: expected {shape:?}, found {:?}",
            t.shape
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("w.bin");
        let a = Tensor::new("a", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-30, 7.0]).unwrap();
        let b = Tensor::new("b", vec![1], vec![42.0]).unwrap();
        write_tensors(&bin, "seed:3", &[a.clone(), b.clone()]).unwrap();
        let (prov, back) = read_tensors(&bin).unwrap();
        assert_eq!(prov, "seed:3");
        assert_eq!(back, vec![a, b]);
        assert!(take(&back, "a", &[3, 2]).is_err());
        assert!(take(&back, "c", &[1]).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("w.bin");
        let a = Tensor::new("a", vec![4], vec![1.0; 4]).unwrap();
        write_tensors(&bin, "", &[a]).unwrap();
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..10]).unwrap();
        assert!(matches!(read_tensors(&bin), Err(Error::TensorFile(_))));
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
