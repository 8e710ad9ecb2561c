//! The `.plc` checkpoint container: UTF-8 JSON header (config, named tensor
//! shapes and offsets, CRC32 of the blob, metadata), a single `\0`
//! separator, then the raw little-endian f32 blob in canonical tensor order.

use super::{LifterWeights, ModelConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;

const FORMAT_VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training stage: "pretrained", "expert" or "versatile".
    pub stage: String,
    pub seed: u64,
    pub step_count: u64,
    /// Fully-resolved run configuration echo (free-form JSON).
    #[serde(default)]
    pub run_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the blob.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
    blob_crc32: u32,
    metadata: CheckpointMeta,
}

fn crc32_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    })
}

/// CRC-32 (IEEE) of a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

pub fn checkpoint_to_bytes(
    weights: &LifterWeights<f32>,
    config: &ModelConfig,
    metadata: &CheckpointMeta,
) -> Result<Vec<u8>> {
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0usize;
    weights.visit(|name, t| {
        tensors.push(TensorInfo {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = Header {
        version: FORMAT_VERSION,
        config: config.clone(),
        tensors,
        blob_crc32: crc32(&blob),
        metadata: metadata.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(0);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn checkpoint_from_bytes(
    bytes: &[u8],
) -> Result<(LifterWeights<f32>, ModelConfig, CheckpointMeta)> {
    let sep = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::CheckpointConfig("missing header separator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..sep])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            got: header.version,
            want: FORMAT_VERSION,
        });
    }
    header.config.validate().map_err(|e| {
        Error::CheckpointConfig(format!("invalid config in header: {e}"))
    })?;

    let blob = &bytes[sep + 1..];
    let actual_crc = crc32(blob);
    if actual_crc != header.blob_crc32 {
        return Err(Error::CheckpointChecksum {
            expected: header.blob_crc32,
            actual: actual_crc,
        });
    }

    let mut weights = LifterWeights::<f32>::zeros(&header.config);
    let mut cursor = 0usize;
    let mut result = Ok(());
    weights.visit_mut(|name, t| {
        if result.is_err() {
            return;
        }
        let Some(info) = header.tensors.get(cursor) else {
            result = Err(Error::CheckpointConfig(format!(
                "header lists {} tensors but the config needs more (missing {name})",
                header.tensors.len()
            )));
            return;
        };
        cursor += 1;
        if info.name != name || info.shape != t.shape() || info.len != t.numel() {
            result = Err(Error::CheckpointShape {
                name: name.clone(),
                header: info.shape.clone(),
                actual: t.shape().to_vec(),
            });
            return;
        }
        let start = info.offset * 4;
        let end = start + info.len * 4;
        if end > blob.len() {
            result = Err(Error::CheckpointConfig(format!(
                "tensor {name} extends past the end of the blob"
            )));
            return;
        }
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let o = start + i * 4;
            *v = f32::from_le_bytes(blob[o..o + 4].try_into().unwrap());
        }
    });
    result?;
    if cursor != header.tensors.len() {
        return Err(Error::CheckpointConfig(format!(
            "header lists {} tensors, config uses only {cursor}",
            header.tensors.len()
        )));
    }
    Ok((weights, header.config, header.metadata))
}

pub fn save_checkpoint(
    weights: &LifterWeights<f32>,
    config: &ModelConfig,
    metadata: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(weights, config, metadata)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LifterWeights<f32>, ModelConfig, CheckpointMeta)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Load and require the stored architecture to match `expected`.
pub fn load_checkpoint_expecting(
    path: &Path,
    expected: &ModelConfig,
) -> Result<(LifterWeights<f32>, CheckpointMeta)> {
    let (weights, config, meta) = load_checkpoint(path)?;
    if &config != expected {
        return Err(Error::CheckpointConfig(format!(
            "checkpoint architecture {config:?} does not match the requested {expected:?}"
        )));
    }
    Ok((weights, meta))
}
