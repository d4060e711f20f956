//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "ULABCKPT" | version u32 | kind u8 | config-json (u32 len + bytes)
//!   | param count u32 | per param: name (u16 len + utf8), ndim u8,
//!     dims (u32 each), values (f64 LE each)
//!   | rng count u32 | per stream: name (u16 len + utf8), seed u64, draws u64
//!
//! Values are always stored as f64 regardless of the build's precision, so
//! checkpoints are portable across wide and narrow builds. The fingerprint is
//! the SHA-256 of the full byte stream.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use ulab_core::param::hex_encode;
use ulab_core::{Param, Real, RngState};

use crate::error::{ModelError, Result};

const MAGIC: &[u8; 8] = b"ULABCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Lm = 1,
    Encoder = 2,
    Head = 3,
}

impl CheckpointKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(CheckpointKind::Lm),
            2 => Ok(CheckpointKind::Encoder),
            3 => Ok(CheckpointKind::Head),
            other => Err(ModelError::Checkpoint(format!("unknown kind byte {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub kind: CheckpointKind,
    pub config_json: String,
    pub params: Vec<(String, Vec<usize>, Vec<Real>)>,
    pub rng_states: Vec<RngState>,
}

pub fn encode(
    kind: CheckpointKind,
    config_json: &str,
    params: &[&Param],
    rng_states: &[RngState],
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name().len() as u16).to_le_bytes());
        out.extend_from_slice(p.name().as_bytes());
        out.push(p.shape().len() as u8);
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out.extend_from_slice(&(rng_states.len() as u32).to_le_bytes());
    for s in rng_states {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&s.seed.to_le_bytes());
        out.extend_from_slice(&s.draws.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("invalid utf8 in checkpoint".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<CheckpointData> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let kind = CheckpointKind::from_u8(r.u8()?)?;
    let cfg_len = r.u32()? as usize;
    let config_json = r.string(cfg_len)?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f64()? as Real);
        }
        params.push((name, shape, values));
    }
    let n_rng = r.u32()? as usize;
    let mut rng_states = Vec::with_capacity(n_rng);
    for _ in 0..n_rng {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let seed = r.u64()?;
        let draws = r.u64()?;
        rng_states.push(RngState { name, seed, draws });
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok(CheckpointData {
        kind,
        config_json,
        params,
        rng_states,
    })
}

/// SHA-256 hex of checkpoint bytes; recorded in run manifests.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex_encode(&Sha256::digest(bytes))
}

pub fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| ModelError::Checkpoint(format!("create {parent:?}: {e}")))?;
    }
    fs::write(path, bytes).map_err(|e| ModelError::Checkpoint(format!("write {path:?}: {e}")))
}

pub fn load(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ModelError::Checkpoint(format!("read {path:?}: {e}")))
}

/// Rebuild a typed param list from checkpoint data, matching by name.
pub fn params_by_name(data: &CheckpointData) -> std::collections::HashMap<String, (Vec<usize>, Vec<Real>)> {
    data.params
        .iter()
        .map(|(n, s, v)| (n.clone(), (s.clone(), v.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let p1 = Param::new("a/w", &[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-9, 7.0]);
        let p2 = Param::new("a/b", &[3], vec![0.5, 0.25, -0.125]);
        let rng = RngState {
            name: "train/batch".into(),
            seed: 42,
            draws: 1337,
        };
        let bytes = encode(
            CheckpointKind::Lm,
            "{\"d\":64}",
            &[&p1, &p2],
            &[rng.clone()],
        );
        let data = decode(&bytes).unwrap();
        assert_eq!(data.kind, CheckpointKind::Lm);
        assert_eq!(data.config_json, "{\"d\":64}");
        assert_eq!(data.params.len(), 2);
        assert_eq!(data.rng_states, vec![rng]);

        // re-encode from decoded data
        let p1b = Param::new(
            data.params[0].0.clone(),
            &data.params[0].1,
            data.params[0].2.clone(),
        );
        let p2b = Param::new(
            data.params[1].0.clone(),
            &data.params[1].1,
            data.params[1].2.clone(),
        );
        let bytes2 = encode(
            data.kind,
            &data.config_json,
            &[&p1b, &p2b],
            &data.rng_states,
        );
        assert_eq!(bytes, bytes2);
        assert_eq!(fingerprint_bytes(&bytes), fingerprint_bytes(&bytes2));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let p = Param::new("w", &[1], vec![1.0]);
        let mut bytes = encode(CheckpointKind::Head, "{}", &[&p], &[]);
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let p = Param::new("w", &[4], vec![1.0, 2.0, 3.0, 4.0]);
        let bytes = encode(CheckpointKind::Encoder, "{}", &[&p], &[]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
