//! Checkpoint persistence.
//!
//! Layout: magic `CERC`, `u32` version, `u32` config-JSON byte length, the
//! config as canonical JSON (sorted keys), `u32` tensor count, then per
//! tensor a `u16` name length, the name bytes, a `u8` rank, `u32` dims, and
//! little-endian `f32` data. The file ends with an 8-byte checksum (leading
//! bytes of the SHA-256) over everything before it. Round trips are
//! bit-exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CERC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic: expected \"CERC\", found {found:?}")]
    BadMagic { found: String },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: String },
    #[error("checkpoint config error: {detail}")]
    Config { detail: String },
}

/// Config as canonical JSON: serializing through `serde_json::Value` sorts
/// the object keys.
pub(crate) fn canonical_config_json(cfg: &ModelConfig) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    value.to_string()
}

/// Serialize a model's config and tensor table.
pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config_json = canonical_config_json(&model.config);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    let named = model.named_params();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest[..8]);
    fs::write(path, out).map_err(CheckpointError::Io)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { what: what.into() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Load a model, verifying magic, version, checksum, and (optionally) that
/// the stored config matches an expected one.
pub fn load_checkpoint(
    path: &Path,
    expected_config: Option<&ModelConfig>,
) -> Result<Model<f32>, ModelError> {
    let bytes = fs::read(path).map_err(CheckpointError::Io)?;
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated {
            what: "header".into(),
        }
        .into());
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 8);
    let digest = Sha256::digest(body);
    if &digest[..8] != checksum {
        return Err(CheckpointError::ChecksumMismatch.into());
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: String::from_utf8_lossy(magic).into_owned(),
        }
        .into());
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let config_len = cur.u32("config length")? as usize;
    let config_bytes = cur.take(config_len, "config JSON")?;
    let config: ModelConfig =
        serde_json::from_slice(config_bytes).map_err(|e| CheckpointError::Config {
            detail: format!("cannot parse stored config: {e}"),
        })?;
    if let Some(expected) = expected_config {
        if *expected != config {
            return Err(CheckpointError::Config {
                detail: format!(
                    "stored config does not match the expected one \
                     (stored num_classes={}, hidden_dim={}, layers={})",
                    config.num_classes, config.hidden_dim, config.num_layers
                ),
            }
            .into());
        }
    }

    let count = cur.u32("tensor count")? as usize;
    let mut map = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len, "tensor name")?).into_owned();
        let rank = cur.take(1, &format!("rank of {name}"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("dims of {name}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4, &format!("tensor {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        map.insert(
            name,
            Tensor::param(shape, data).map_err(ModelError::Tensor)?,
        );
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Config {
            detail: format!("{} trailing bytes after tensor table", body.len() - cur.pos),
        }
        .into());
    }
    Model::from_named_params(&config, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunMode;
    use crate::tensor::Tape;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            max_positions: 16,
            input_dim: 4,
            use_conv_front_end: true,
            conv_spec: super::super::ConvSpec {
                num_blocks: 2,
                channels: 0,
                kernel_size: 3,
            },
            use_interlocutor: true,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn forward_fixed(model: &Model<f32>) -> Vec<f32> {
        let tape = Tape::disabled();
        let x = Tensor::from_vec(vec![6, 4], (0..24).map(|i| (i as f32) * 0.1 - 1.0).collect())
            .unwrap();
        let positions: Vec<u32> = (0..6).collect();
        let speakers = vec![0, 0, 1, 1, -1, 0];
        let pad = vec![false; 6];
        model
            .forward(&tape, &x, &positions, &speakers, &pad, &mut RunMode::Eval)
            .unwrap()
            .data()
            .to_vec()
    }

    #[test]
    fn roundtrip_preserves_logits_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::<f32>::init(&tiny_config(), 9).unwrap();
        let before = forward_fixed(&model);
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path, None).unwrap();
        let after = forward_fixed(&loaded);
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_tensor_is_a_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::<f32>::init(&tiny_config(), 9).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // drop bytes out of the middle, then re-checksum so the truncation
        // (not the checksum) is what gets reported
        bytes.truncate(bytes.len() - 8 - 13);
        let digest = Sha256::digest(&bytes);
        let mut out = bytes;
        out.extend_from_slice(&digest[..8]);
        std::fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(msg.contains("head.bias") || msg.contains("tensor"), "{msg}");
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::<f32>::init(&tiny_config(), 9).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path, None).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn mismatching_expected_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::<f32>::init(&tiny_config(), 9).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let mut other = tiny_config();
        other.num_classes = 4;
        let err = load_checkpoint(&path, Some(&other)).unwrap_err();
        assert!(err.to_string().contains("config"), "{err}");
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut bytes = b"NOPE".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest[..8]);
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path, None).unwrap_err();
        assert!(err.to_string().contains("CERC"), "{err}");
    }

    #[test]
    fn config_json_is_canonical() {
        let json = canonical_config_json(&tiny_config());
        // top-level keys must appear in sorted order
        let keys = [
            "conv_spec",
            "dropout",
            "ffn_dim",
            "hidden_dim",
            "input_dim",
            "max_positions",
            "max_speakers",
            "num_classes",
            "num_heads",
            "num_layers",
            "use_conv_front_end",
            "use_interlocutor",
        ];
        let mut last = 0usize;
        for key in keys {
            let probe = format!("\"{key}\":");
            let at = json.find(&probe).unwrap_or_else(|| panic!("{key} missing: {json}"));
            assert!(at >= last, "{key} out of order in {json}");
            last = at;
        }
    }
}
