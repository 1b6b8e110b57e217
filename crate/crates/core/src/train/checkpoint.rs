//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "XVITCKPT"
//! version      u32       currently 1
//! config_len   u32
//! config       config_len bytes of "key = value" lines (ViTConfig keys plus
//!              free-form "meta.*" keys)
//! count        u32       number of arrays
//! count x {
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   rank       u8
//!   dims       rank x u64
//!   data       prod(dims) x f64
//! }
//! crc32        u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Arrays appear in shape-table order and must match the shape table of the
//! stored configuration exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::kv::KvMap;
use crate::vit::{NamedArrays, ViTConfig, ViTParams};

pub const MAGIC: &[u8; 8] = b"XVITCKPT";
pub const VERSION: u32 = 1;

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ViTConfig,
    pub params: ViTParams,
    /// Free-form metadata stored next to the configuration, without the
    /// `meta.` prefix.
    pub meta: KvMap,
}

pub fn encode_checkpoint(params: &ViTParams, config: &ViTConfig, meta: &KvMap) -> Vec<u8> {
    let mut kv = config.to_kv();
    for (k, v) in meta.iter() {
        kv.insert(&format!("meta.{k}"), v);
    }
    let text = kv.to_text();
    let arrays = params.named();
    let mut out = Vec::with_capacity(64 + 8 * params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("record runs past the end of the payload".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::Checkpoint(
            "checksum mismatch (file is truncated or corrupt)".into(),
        ));
    }
    let mut c = Cursor {
        bytes: payload,
        pos: MAGIC.len(),
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (this build reads version {VERSION})"
        )));
    }
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?)
        .map_err(|_| Error::Checkpoint("configuration block is not UTF-8".into()))?;
    let mut config_kv = KvMap::default();
    let mut meta = KvMap::default();
    for (k, v) in KvMap::parse(text)?.iter() {
        match k.strip_prefix("meta.") {
            Some(rest) => meta.insert(rest, v),
            None => config_kv.insert(k, v),
        }
    }
    let config = ViTConfig::from_kv(config_kv)?;

    let count = c.u32()? as usize;
    let mut arrays: NamedArrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("array {name} is too large")))?;
        let data = c
            .take(bytes)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        arrays.push((name, shape, data));
    }
    if c.pos != payload.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after the last array".into(),
        ));
    }
    let params =
        ViTParams::from_named(&config, arrays).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint {
        config,
        params,
        meta,
    })
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(
    path: &Path,
    params: &ViTParams,
    config: &ViTConfig,
    meta: &KvMap,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, config, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}
