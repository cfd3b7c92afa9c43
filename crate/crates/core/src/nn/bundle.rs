//! Parameter file format.
//!
//! ```text
//! SPECRECON-BUNDLE 1 <header-bytes>\n
//! <header: UTF-8 JSON, exactly header-bytes long>\n
//! <blob section: little-endian f32 values of every tensor, in header order>
//! ```
//!
//! The header is a JSON object with `metadata` (free-form, supplied by the
//! caller: architectures, STFT config, normalization statistics) and
//! `tensors`, a list of `{name, shape, offset, len}` entries. `offset` is the
//! byte offset of the tensor within the blob section and `len` its element
//! count.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &str = "SPECRECON-BUNDLE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 3],
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Contents of a bundle file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawBundle {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl RawBundle {
    /// Removes and returns the tensors whose names start with `prefix`,
    /// with the prefix stripped.
    pub fn take_prefixed<T: Real>(&mut self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let (taken, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tensors)
            .into_iter()
            .partition(|(n, _)| n.starts_with(prefix));
        self.tensors = rest;
        taken
            .into_iter()
            .map(|(n, t)| (n[prefix.len()..].to_string(), t.cast()))
            .collect()
    }
}

/// Serializes `tensors` (stored as f32) with `metadata` into one buffer.
pub fn encode<T: Real>(
    metadata: &impl Serialize,
    tensors: &[(String, &Tensor<T>)],
) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape(),
            offset,
            len: t.len(),
        });
        offset += 4 * t.len();
    }
    let header = Header {
        metadata: serde_json::to_value(metadata)
            .map_err(|e| Error::InvalidConfig(format!("bundle metadata: {e}")))?,
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::InvalidConfig(format!("bundle header: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + offset + 64);
    writeln!(out, "{MAGIC} {VERSION} {}", json.len()).expect("write to vec");
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawBundle> {
    let bad = |reason: &str| Error::malformed(path, reason);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing first line"))?;
    let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("first line is not UTF-8"))?;
    let mut parts = first.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(bad("wrong magic"));
    }
    if parts.next().and_then(|v| v.parse::<u32>().ok()) != Some(VERSION) {
        return Err(bad("unsupported version"));
    }
    let header_len: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing header length"))?;
    let start = nl + 1;
    let blob_start = start + header_len + 1;
    if bytes.len() < blob_start || bytes[blob_start - 1] != b'\n' {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[start..start + header_len])
        .map_err(|e| Error::malformed(path, format!("header: {e}")))?;
    let blobs = &bytes[blob_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(bad("tensor shape and length disagree"));
        }
        let end = entry.offset + 4 * entry.len;
        if end > blobs.len() {
            return Err(Error::malformed(path, format!("tensor {} is truncated", entry.name)));
        }
        let data = blobs[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    Ok(RawBundle {
        metadata: header.metadata,
        tensors,
    })
}

pub fn write<T: Real>(
    path: &Path,
    metadata: &impl Serialize,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let bytes = encode(metadata, tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<RawBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_header_then_little_endian_blobs() {
        let a = Tensor::<f64>::new([1, 1, 2], vec![1.0, -2.5]).unwrap();
        let b = Tensor::<f64>::scalar(0.125);
        let bytes = encode(
            &serde_json::json!({"kind": "test"}),
            &[("a".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("SPECRECON-BUNDLE 1 "));
        let tail = &bytes[bytes.len() - 12..];
        assert_eq!(&tail[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&tail[4..8], &(-2.5f32).to_le_bytes());
        assert_eq!(&tail[8..12], &0.125f32.to_le_bytes());

        let raw = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(raw.metadata["kind"], "test");
        assert_eq!(raw.tensors[0].0, "a");
        assert_eq!(raw.tensors[0].1.data(), &[1.0, -2.5]);
        assert_eq!(raw.tensors[1].1.shape(), [1, 1, 1]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let p = Path::new("mem");
        assert!(decode(b"nope", p).is_err());
        assert!(decode(b"SPECRECON-BUNDLE 2 2\n{}\n", p).is_err());
        assert!(decode(b"SPECRECON-BUNDLE 1 999\n{}\n", p).is_err());
        let t = Tensor::<f32>::zeros([1, 1, 4]);
        let mut bytes = encode(&(), &[("t".to_string(), &t)]).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(decode(&bytes, p).is_err());
    }
}
