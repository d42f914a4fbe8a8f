//! Checkpoint directories: `manifest.json` describing the architecture and
//! tensor layout, `params.bin` holding every parameter as little-endian
//! 32-bit floats concatenated in manifest order. Round trips are bit-exact
//! for f32 networks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Net;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into params.bin.
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Network configuration, as serialized by the caller; enough to
    /// rebuild the architecture before loading weights into it.
    pub architecture: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn fail(dir: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: dir.to_path_buf(),
        reason: reason.into(),
    }
}

/// Write `net`'s parameters and the given architecture description under
/// `dir`, creating it if needed.
pub fn save<T: Scalar>(
    dir: &Path,
    net: &impl Net<T>,
    architecture: &impl Serialize,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    net.visit(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for &v in p.value.data() {
            blob.extend_from_slice(&(Scalar::to_f64(v) as f32).to_le_bytes());
        }
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: serde_json::to_value(architecture)?,
        tensors,
        metadata,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io(manifest_path, e))?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, &blob).map_err(|e| Error::io(params_path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(fail(
            dir,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    Ok(manifest)
}

fn read_blob(dir: &Path, manifest: &Manifest) -> Result<Vec<u8>> {
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(PathBuf::from(&path), e))?;
    let mut expected = 0u64;
    for t in &manifest.tensors {
        if t.offset != expected {
            return Err(fail(
                dir,
                format!("tensor {} at offset {}, expected {expected}", t.name, t.offset),
            ));
        }
        expected += 4 * t.shape.iter().product::<usize>() as u64;
    }
    if blob.len() as u64 != expected {
        return Err(fail(
            dir,
            format!("params.bin holds {} bytes, manifest describes {expected}", blob.len()),
        ));
    }
    Ok(blob)
}

/// Overwrite every parameter of `net` from the checkpoint. Names and shapes
/// must match the manifest exactly, with nothing missing or left over.
pub fn load_into<T: Scalar>(dir: &Path, net: &mut impl Net<T>) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    let blob = read_blob(dir, &manifest)?;
    let mut by_name: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
    for t in &manifest.tensors {
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(fail(dir, format!("duplicate tensor {}", t.name)));
        }
    }
    let mut used = 0usize;
    let mut problem: Option<String> = None;
    net.visit_mut(&mut |p| {
        if problem.is_some() {
            return;
        }
        let Some(entry) = by_name.get(p.name.as_str()) else {
            problem = Some(format!("parameter {} missing from checkpoint", p.name));
            return;
        };
        if entry.shape != p.value.shape() {
            problem = Some(format!(
                "parameter {} has shape {:?} in checkpoint, {:?} in network",
                p.name,
                entry.shape,
                p.value.shape()
            ));
            return;
        }
        let n = p.value.numel();
        let start = entry.offset as usize;
        let data: Vec<T> = blob[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        p.assign(data).expect("shape already checked");
        used += 1;
    });
    if let Some(reason) = problem {
        return Err(fail(dir, reason));
    }
    if used != manifest.tensors.len() {
        return Err(fail(
            dir,
            format!(
                "checkpoint describes {} tensors, network consumed {used}",
                manifest.tensors.len()
            ),
        ));
    }
    Ok(manifest)
}
