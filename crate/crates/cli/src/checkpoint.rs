//! Binary checkpoint files.
//!
//! Little-endian layout: the magic `MCCKPT01`, a `u32` layer count, then per
//! layer a `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32` dims
//! and the `f64` values in row-major order. An 8-byte FNV-1a checksum of
//! everything before it closes the file.
//!
//! Provenance (learner, task, config hash, seed) is kept next to the binary
//! file in a small JSON sidecar with the same stem.

use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use modeconn::learners::{Checkpoint, Provenance};
use modeconn::model::Layout;
use modeconn::{MlpConfig, ParamVector};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"MCCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: at byte {offset}: {message}", path.display())]
    Format { path: PathBuf, offset: u64, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode(params: &ParamVector) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(expected_size(layout));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layout.entries().len() as u32).to_le_bytes());
    for (i, (name, shape)) in layout.entries().iter().enumerate() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &params.as_slice()[layout.range(i)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

/// Header, per-layer records, values and footer.
pub fn expected_size(layout: &Layout) -> usize {
    let header = MAGIC.len() + 4;
    let layers: usize = layout
        .entries()
        .iter()
        .map(|(name, shape)| 2 + name.len() + 1 + 4 * shape.len() + 8 * shape.iter().product::<usize>())
        .sum();
    header + layers + 8
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        // The last 8 bytes are the footer and never part of the body.
        let body_end = self.bytes.len().saturating_sub(8);
        if self.pos + n > body_end {
            return Err(self.fail(self.bytes.len(), format!("file truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamVector, CheckpointError> {
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let at = bytes.iter().zip(MAGIC).position(|(a, b)| a != b).unwrap_or(bytes.len());
        return Err(r.fail(at, "bad magic, not a checkpoint file"));
    }
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(r.fail(bytes.len(), "file truncated before the layer count"));
    }
    let body = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body..].try_into().unwrap());
    if checksum(&bytes[..body]) != stored {
        return Err(r.fail(body, "checksum mismatch"));
    }
    r.pos = MAGIC.len();
    let count = r.u32("layer count")?;
    let mut entries = Vec::with_capacity(count as usize);
    let mut values = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("layer name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "layer name")?).map(str::to_string).ok();
        let name = name.ok_or_else(|| r.fail(at + 2, "layer name is not UTF-8"))?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(8 * n, "layer values")?;
        values.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        entries.push((name, shape));
    }
    if r.pos != body {
        return Err(r.fail(r.pos, format!("{} unexpected bytes before the checksum", body - r.pos)));
    }
    ParamVector::new(Arc::new(Layout::new(entries)), values).map_err(|e| r.fail(MAGIC.len(), e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    name: String,
    learner: String,
    task_id: usize,
    config_hash: String,
    seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(path, encode(&ckpt.params)).map_err(io)?;
    let p = &ckpt.provenance;
    let meta = Sidecar {
        name: ckpt.name.clone(),
        learner: p.learner.clone(),
        task_id: p.task_id,
        config_hash: format!("{:016x}", p.config_hash),
        seed: p.seed,
    };
    let json = serde_json::to_string_pretty(&meta).expect("plain struct") + "\n";
    std::fs::write(sidecar_path(path), json).map_err(io)
}

/// Loads a checkpoint; without a readable sidecar the name is the file stem
/// and the provenance is left blank.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let params = decode(&bytes, path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = std::fs::read_to_string(sidecar_path(path))
        .ok()
        .and_then(|s| serde_json::from_str::<Sidecar>(&s).ok());
    Ok(match meta {
        Some(m) => Checkpoint {
            name: m.name,
            params,
            provenance: Provenance {
                learner: m.learner,
                task_id: m.task_id,
                config_hash: u64::from_str_radix(&m.config_hash, 16).unwrap_or(0),
                seed: m.seed,
            },
        },
        None => Checkpoint::new(stem, params, "unknown", 0, 0),
    })
}

/// The network a checkpoint belongs to, if its layout is one of ours.
pub fn mlp_for(params: &ParamVector) -> Option<MlpConfig> {
    let e = params.layout().entries();
    let (first, last) = (e.first()?, e.last()?);
    let (input, hidden) = (*first.1.first()?, *first.1.get(1)?);
    let classes = *last.1.first()?;
    let cfg = MlpConfig::new(input, hidden, classes, 0.0).ok()?;
    (*cfg.layout() == **params.layout()).then_some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use modeconn::model::init_params;
    use modeconn::Rng;

    fn params() -> ParamVector {
        let cfg = MlpConfig::new(5, 4, 3, 0.0).unwrap();
        init_params(&cfg, &mut Rng::new(9))
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let p = params();
        let back = decode(&encode(&p), Path::new("x")).unwrap();
        assert_eq!(p, back);
        assert!(p.as_slice().iter().zip(back.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(mlp_for(&back), Some(MlpConfig::new(5, 4, 3, 0.0).unwrap()));
    }

    #[test]
    fn size_matches_arithmetic() {
        let p = params();
        let bytes = encode(&p);
        // magic + count, then six (len, name, rank, dims) records, the values, the footer
        let names: usize = ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias", "fc3.weight", "fc3.bias"]
            .iter()
            .map(|n| n.len())
            .sum();
        let dims = 2 + 1 + 2 + 1 + 2 + 1;
        let want = 12 + 6 * (2 + 1) + names + 4 * dims + 8 * (5 * 4 + 4 + 4 * 4 + 4 + 4 * 3 + 3) + 8;
        assert_eq!(bytes.len(), want);
        assert_eq!(expected_size(p.layout()), want);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&params());
        bytes[40] ^= 0x10;
        let e = decode(&bytes, Path::new("c")).unwrap_err();
        assert!(e.to_string().contains("checksum mismatch"), "{e}");
        let mut bad = encode(&params());
        bad[3] = b'X';
        let e = decode(&bad, Path::new("m")).unwrap_err();
        assert!(e.to_string().contains("at byte 3"), "{e}");
        let good = encode(&params());
        let e = decode(&good[..good.len() - 20], Path::new("t")).unwrap_err();
        assert!(e.to_string().contains("checksum"), "{e}");
    }

    #[test]
    fn truncation_with_valid_checksum_reports_offset() {
        // A body cut short but re-sealed with a matching footer.
        let good = encode(&params());
        let mut cut = good[..good.len() - 8 - 16].to_vec();
        let sum = checksum(&cut);
        cut.extend_from_slice(&sum.to_le_bytes());
        let e = decode(&cut, Path::new("t")).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");
    }

    #[test]
    fn files_carry_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hat_w_2.ckpt");
        let mut c = Checkpoint::new("hat_w_2", params(), "continual", 2, 5);
        c.provenance.config_hash = 0xdead_beef;
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected_size(c.params.layout()));
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let bare = load_checkpoint(&path).unwrap();
        assert_eq!(bare.name, "hat_w_2");
        assert_eq!(bare.params, c.params);
    }
}
