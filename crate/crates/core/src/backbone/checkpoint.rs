//! Single-file checkpoints: `GCAL` magic, `u32` format version, `u64`
//! manifest length, a JSON manifest of `(name, shape, offset)` entries,
//! then every parameter as little-endian `f64` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GCAL";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(default)]
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

/// Writes all parameters (frozen ones included) plus free-form metadata.
pub fn save_checkpoint<S: Scalar>(
    store: &ParamStore<S>,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut offset = 0;
    let entries = store
        .iter()
        .map(|p| {
            let e = Entry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset,
            };
            offset += p.numel();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        version: CHECKPOINT_VERSION,
        meta,
        entries,
    })?;
    let mut buf = Vec::with_capacity(16 + manifest.len() + 8 * offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for p in store.iter() {
        for v in p.tensor.data().iter() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads values into `store`, whose names and shapes must match the file
/// exactly. Returns the stored metadata.
pub fn load_checkpoint<S: Scalar>(store: &ParamStore<S>, path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..header_end])?;
    if manifest.version != version {
        return Err(bad("manifest version disagrees with file header"));
    }
    let data = &bytes[header_end..];
    if manifest.entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.entries.len(),
            store.len()
        )));
    }
    for (entry, p) in manifest.entries.iter().zip(store.iter()) {
        if entry.name != p.name || entry.shape != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match model's {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.tensor.shape()
            )));
        }
        let n = p.numel();
        let start = entry.offset * 8;
        let chunk = data
            .get(start..start + n * 8)
            .ok_or_else(|| bad("truncated data section"))?;
        let mut dst = p.tensor.data_mut();
        for (v, raw) in dst.iter_mut().zip(chunk.chunks_exact(8)) {
            *v = S::of(f64::from_le_bytes(raw.try_into().expect("8 bytes")));
        }
    }
    Ok(manifest.meta)
}
