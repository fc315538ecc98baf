//! `VITW1` tensor container.
//!
//! ```text
//! offset  size  field
//! 0       6     magic "VITW1\n"
//! 6       8     header length H, u64 little-endian
//! 14      H     UTF-8 JSON array of {"name", "dtype": "f32", "shape": [..]}
//! 14+H    P     payloads, f32 little-endian, concatenated in header order
//! 14+H+P  8     FNV-1a 64 of the payload bytes, u64 little-endian
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"VITW1\n";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

pub fn encode_container(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate tensor name {}",
                t.name
            )));
        }
    }
    let header: Vec<HeaderEntry> = tensors
        .iter()
        .map(|t| HeaderEntry {
            name: t.name.clone(),
            dtype: "f32".into(),
            shape: t.tensor.shape().to_vec(),
        })
        .collect();
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload_len: usize = tensors.iter().map(|t| t.tensor.numel() * 4).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 16 + header.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let payload_start = out.len();
    for t in tensors {
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out[payload_start..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let need = |offset: usize, len: usize, what: &str| -> Result<()> {
        if bytes.len() < offset + len {
            Err(Error::Truncated {
                offset: bytes.len() as u64,
                msg: format!("{what} needs bytes {offset}..{}", offset + len),
            })
        } else {
            Ok(())
        }
    };
    need(0, MAGIC.len(), "magic")?;
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, "bad magic, not a VITW1 container"));
    }
    let mut pos = MAGIC.len();
    need(pos, 8, "header length")?;
    let header_len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let header_len =
        usize::try_from(header_len).map_err(|_| Error::format(path, "header length overflows"))?;
    need(pos, header_len, "header")?;
    let header: Vec<HeaderEntry> = serde_json::from_slice(&bytes[pos..pos + header_len])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    pos += header_len;

    let payload_start = pos;
    let mut out = Vec::with_capacity(header.len());
    let mut seen = std::collections::HashSet::new();
    for entry in header {
        if entry.dtype != "f32" {
            return Err(Error::format(
                path,
                format!("unknown dtype {:?} for tensor {}", entry.dtype, entry.name),
            ));
        }
        if !seen.insert(entry.name.clone()) {
            return Err(Error::format(
                path,
                format!("duplicate tensor name {}", entry.name),
            ));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::format(path, format!("shape of {} overflows", entry.name)))?;
        let len = numel
            .checked_mul(4)
            .ok_or_else(|| Error::format(path, format!("shape of {} overflows", entry.name)))?;
        need(pos, len, &format!("payload of {}", entry.name))?;
        let data = bytes[pos..pos + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += len;
        let tensor = Tensor::new(entry.shape, data)
            .map_err(|e| Error::format(path, format!("tensor {}: {e}", entry.name)))?;
        out.push(NamedTensor::new(entry.name, tensor));
    }
    need(pos, 8, "checksum")?;
    let stored = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    let computed = fnv1a64(&bytes[payload_start..pos]);
    if stored != computed {
        return Err(Error::Checksum {
            offset: pos as u64,
            stored,
            computed,
        });
    }
    if bytes.len() != pos + 8 {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after checksum", bytes.len() - pos - 8),
        ));
    }
    Ok(out)
}

pub fn write_container(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode_container(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}
