//! Self-describing archive of named f64 arrays.
//!
//! Layout: the magic line `DSLCKPT1\n`, a little-endian u64 header length, a
//! JSON header, then every array's values as little-endian f64 in header order.
//! The header holds caller metadata, the array table (name, shape, offset in
//! values) and a SHA-256 of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8] = b"DSLCKPT1\n";

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: Value,
    arrays: Vec<ArrayEntry>,
    content_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub arrays: Vec<(String, Tensor)>,
    pub content_hash: String,
}

pub fn write_checkpoint(path: impl AsRef<Path>, metadata: Value, arrays: &[(String, &Tensor)]) -> Result<String> {
    let mut data = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0;
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len();
        for v in &t.data {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let content_hash = hex::encode(Sha256::digest(&data));
    let header = serde_json::to_vec(&Header {
        metadata,
        arrays: entries,
        content_hash: content_hash.clone(),
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    fs::write(path, out)?;
    Ok(content_hash)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let corrupt = |why: &str| Error::Checkpoint(why.to_string());
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| corrupt("missing checkpoint magic"))?;
    if rest.len() < 8 {
        return Err(corrupt("truncated header length"));
    }
    let hlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let data = &rest[hlen..];
    if data.len() % 8 != 0 {
        return Err(corrupt("data section is not a whole number of f64 values"));
    }
    if hex::encode(Sha256::digest(data)) != header.content_hash {
        return Err(corrupt("content hash mismatch"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in header.arrays {
        let len: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| corrupt(&format!("array `{}` runs past the data section", e.name)))?;
        arrays.push((e.name, Tensor::new(e.shape, slice.to_vec())));
    }
    Ok(Checkpoint {
        metadata: header.metadata,
        arrays,
        content_hash: header.content_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300]);
        let b = Tensor::new(vec![1], vec![std::f64::consts::PI]);
        let meta = serde_json::json!({"kind": "test", "iterations": 3});
        write_checkpoint(&path, meta.clone(), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.metadata, meta);
        assert_eq!(ck.arrays, vec![("a".to_string(), a), ("b".to_string(), b)]);

        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
