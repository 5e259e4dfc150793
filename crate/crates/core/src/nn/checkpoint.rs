//! Checkpoint file: one line of JSON manifest, a newline, then every tensor
//! as little-endian `f32` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tensor, UNetConfig, UNetModel};
use crate::volume::atomic_write;
use crate::{Error, Real, Result};

const FORMAT: &str = "dualseg-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: UNetConfig,
    pub entries: Vec<CheckpointEntry>,
}

pub fn checkpoint_bytes<T: Real>(model: &UNetModel<T>) -> Vec<u8> {
    let params = model.parameters();
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        config: *model.config(),
        entries: params
            .iter()
            .map(|p| CheckpointEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), trainable: p.trainable })
            .collect(),
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&(v.to_f64().unwrap_or(0.0) as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint<T: Real>(model: &UNetModel<T>, path: &Path) -> Result<()> {
    atomic_write(path, &checkpoint_bytes(model))
}

pub fn read_manifest(bytes: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing manifest line".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", manifest.format, manifest.version)));
    }
    Ok((manifest, &bytes[split + 1..]))
}

/// Rebuilds a model for `expected`, validating every name and shape.
pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8], expected: &UNetConfig) -> Result<UNetModel<T>> {
    let (manifest, payload) = read_manifest(bytes)?;
    if manifest.config != *expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint architecture {:?} does not match configured {:?}",
            manifest.config, expected
        )));
    }
    let mut model = UNetModel::<T>::new(*expected)?;
    let mut params = model.parameters_mut();
    if params.len() != manifest.entries.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.entries.len(),
            params.len()
        )));
    }
    let total: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 4 {
        return Err(Error::Checkpoint(format!("payload holds {} bytes, manifest needs {}", payload.len(), total * 4)));
    }
    let mut offset = 0;
    for (p, e) in params.iter_mut().zip(&manifest.entries) {
        if p.name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "entry {} {:?} does not match model tensor {} {:?}",
                e.name,
                e.shape,
                p.name,
                p.value.shape()
            )));
        }
        let n = p.value.len();
        let values = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        p.value = Tensor::from_vec(&e.shape, values)?;
        offset += 4 * n;
    }
    Ok(model)
}

pub fn load_checkpoint<T: Real>(path: &Path, expected: &UNetConfig) -> Result<UNetModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> UNetConfig {
        UNetConfig { input_size: 16, base_channels: 4, ..UNetConfig::desk() }
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let m = UNetModel::<f32>::with_seed(cfg(), 3).unwrap();
        let back: UNetModel<f32> = checkpoint_from_bytes(&checkpoint_bytes(&m), &cfg()).unwrap();
        let a: Vec<_> = m.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        let b: Vec<_> = back.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        assert_eq!(a, b);
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&m));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let m = UNetModel::<f32>::with_seed(cfg(), 3).unwrap();
        let other = UNetConfig { base_channels: 8, ..cfg() };
        assert!(matches!(checkpoint_from_bytes::<f32>(&checkpoint_bytes(&m), &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = UNetModel::<f32>::with_seed(cfg(), 3).unwrap();
        let bytes = checkpoint_bytes(&m);
        assert!(checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 4], &cfg()).is_err());
    }

    #[test]
    fn renamed_entry_is_rejected() {
        let m = UNetModel::<f32>::with_seed(cfg(), 3).unwrap();
        let bytes = checkpoint_bytes(&m);
        let (mut manifest, payload) = read_manifest(&bytes).unwrap();
        manifest.entries[0].name = "enc0.conv1.kernel".into();
        let mut forged = serde_json::to_vec(&manifest).unwrap();
        forged.push(b'\n');
        forged.extend_from_slice(payload);
        assert!(matches!(checkpoint_from_bytes::<f32>(&forged, &cfg()), Err(Error::Checkpoint(_))));
    }
}
