//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "SVSE"
//! version u32
//! json    u64 length, then UTF-8 JSON metadata (configs, counters)
//! records until EOF:
//!     name    u32 length, then UTF-8 bytes
//!     rank    u32
//!     extents rank x u64
//!     payload product(extents) x f32 raw bits
//! ```
//!
//! Payloads round-trip bit-exactly. Every way a file can be wrong maps to a
//! distinct [`CheckpointError`] variant.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::ModelConfig;
use crate::nn::Param;
use crate::saliency::ScorerConfig;

pub const MAGIC: [u8; 4] = *b"SVSE";
pub const VERSION: u32 = 1;

/// JSON metadata block stored after the header.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    /// "svsec" for the full model, "scorer" for the saliency scorer.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerConfig>,
    #[serde(default)]
    pub epoch: u64,
    #[serde(default)]
    pub rng_state: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<crate::model::OptimConfig>,
    #[serde(default)]
    pub adam_step: u64,
}

pub fn save_container(path: &Path, meta: &CheckpointMeta, tensors: &[(String, Param)]) -> Result<()> {
    let json = serde_json::to_vec(meta)
        .map_err(|e| Error::Contract(format!("checkpoint meta does not serialize: {e}")))?;
    let mut out = Vec::with_capacity(64 + json.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, p) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &e in &p.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(format!(
                "{what}: wanted {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

pub fn load_container(path: &Path) -> Result<(CheckpointMeta, Vec<(String, Param)>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, at: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let json_len = r.u64("json length")? as usize;
    let json = r.take(json_len, "json block")?;
    let meta: CheckpointMeta = serde_json::from_slice(json)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata json: {e}")))?;

    let mut tensors = Vec::new();
    while !r.done() {
        let name_len = r.u32("tensor name length")? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor name length {name_len} is implausible"
            ))
            .into());
        }
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor name utf-8: {e}")))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name} has rank {rank}"
            ))
            .into());
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = r.u64("tensor extent")?;
            if e == 0 {
                return Err(CheckpointError::Corrupt(format!("tensor {name} has a zero extent")).into());
            }
            numel = numel.checked_mul(e).ok_or_else(|| {
                CheckpointError::Corrupt(format!("tensor {name} extents overflow"))
            })?;
            shape.push(e as usize);
        }
        let payload = r.take(numel as usize * 4, &format!("tensor {name} payload"))?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Param { shape, data }));
    }
    Ok((meta, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sample_meta() -> CheckpointMeta {
        CheckpointMeta {
            kind: "svsec".into(),
            model: Some(ModelConfig::default()),
            scorer: None,
            epoch: 3,
            rng_state: 0xabcd,
            optim: None,
            adam_step: 0,
        }
    }

    fn sample_tensors() -> Vec<(String, Param)> {
        vec![
            ("a.weight".into(), Param { shape: vec![2, 3], data: vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, 1e30] }),
            ("a.bias".into(), Param { shape: vec![2], data: vec![0.5, -0.5] }),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        save_container(&path, &sample_meta(), &sample_tensors()).unwrap();
        let (meta, tensors) = load_container(&path).unwrap();
        assert_eq!(meta, sample_meta());
        assert_eq!(tensors, sample_tensors());
    }

    #[test]
    fn bad_magic_is_distinct() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOPE rest of file").unwrap();
        match load_container(&path) {
            Err(Error::Checkpoint(CheckpointError::BadMagic)) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        save_container(&path, &sample_meta(), &sample_tensors()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_container(&path) {
            Err(Error::Checkpoint(CheckpointError::UnsupportedVersion(99))) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_distinct_and_returns_nothing() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        save_container(&path, &sample_meta(), &sample_tensors()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Clip mid-payload of the last tensor.
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_container(&path) {
            Err(Error::Checkpoint(CheckpointError::Truncated(_))) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_json_is_distinct() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.ckpt");
        save_container(&path, &sample_meta(), &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[16] = b'!'; // clobber the json block
        std::fs::write(&path, bytes).unwrap();
        match load_container(&path) {
            Err(Error::Checkpoint(CheckpointError::Corrupt(_))) => {}
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }
}
