//! Parameter checkpoint file.
//!
//! ```text
//! "SSLCKPT\n"
//! u32 LE  manifest length H
//! H bytes JSON manifest: format_version, metadata, params [{name, shape, requires_grad}]
//! f64 LE  parameter blocks in manifest order
//! u32 LE  CRC-32 over manifest and blocks
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AdResult, AutodiffError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    metadata: serde_json::Value,
    params: Vec<ParamEntry>,
}

/// Writes every parameter plus free-form `metadata` (hyperparameters).
pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, metadata: &serde_json::Value) -> AdResult<()> {
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        metadata: metadata.clone(),
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                requires_grad: p.requires_grad,
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + manifest_bytes.len() + 8 * store.num_scalars());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest_bytes);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes[CHECKPOINT_MAGIC.len() + 4..]);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint back into a fresh store plus its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> AdResult<(ParamStore, serde_json::Value)> {
    let bytes = fs::read(path)?;
    let truncated = || AutodiffError::Checkpoint("file truncated".into());
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint("not a checkpoint file".into()));
    }
    let mut pos = CHECKPOINT_MAGIC.len();
    let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
    pos += 4;
    let manifest_bytes = bytes.get(pos..pos + len).ok_or_else(truncated)?;
    let manifest: Manifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| AutodiffError::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(AutodiffError::VersionMismatch {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    pos += len;
    let body_len: usize = manifest.params.iter().map(|p| 8 * p.shape.iter().product::<usize>()).sum();
    if bytes.len() != pos + body_len + 4 {
        return Err(AutodiffError::Checkpoint(format!(
            "expected {} bytes, found {}",
            pos + body_len + 4,
            bytes.len()
        )));
    }
    let stored = u32::from_le_bytes(bytes[pos + body_len..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[CHECKPOINT_MAGIC.len() + 4..pos + body_len]);
    if stored != computed {
        return Err(AutodiffError::ChecksumMismatch { stored, computed });
    }
    let mut store = ParamStore::new();
    for entry in manifest.params {
        let n: usize = entry.shape.iter().product();
        let data = bytes[pos..pos + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        pos += 8 * n;
        store.add(entry.name, Tensor::new(&entry.shape, data)?, entry.requires_grad)?;
    }
    Ok((store, manifest.metadata))
}
