//! Shared framing for every binary file the crate writes.
//!
//! ```text
//! [4]  magic
//! u32  schema version (little-endian)
//! u64  JSON header length in bytes (little-endian)
//! [n]  JSON header (UTF-8)
//! [..] payload
//! ```
//!
//! Recordings (`EEGC`), featurized caches (`EEGF`), parameter checkpoints
//! (`EEGP`) and text embedding banks (`EEGT`) all use this layout; only the
//! header schema and payload element type differ.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const PREAMBLE: usize = 4 + 4 + 8;

pub(crate) fn encode<H: Serialize>(magic: &[u8; 4], version: u32, header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits a framed buffer into its parsed header and the raw payload bytes.
pub(crate) fn decode<'a, H: DeserializeOwned>(magic: &[u8; 4], version: u32, bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < PREAMBLE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the {PREAMBLE}-byte preamble",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::MalformedHeader(format!(
            "unsupported schema version {found}, expected {version}"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = PREAMBLE
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::MalformedHeader(format!("header length {len} exceeds file size")))?;
    let header = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::MalformedHeader(format!("header json: {e}")))?;
    Ok((header, &bytes[end..]))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn f32_payload(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn f64_payload(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub(crate) fn read_f32s(bytes: &[u8], count: usize) -> Result<Vec<f32>> {
    let need = count * 4;
    if bytes.len() < need {
        return Err(Error::TruncatedPayload {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(bytes[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_f64s(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    let need = count * 8;
    if bytes.len() < need {
        return Err(Error::TruncatedPayload {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(bytes[..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_magic_and_short_files() {
        let bytes = encode(b"ABCD", 1, &serde_json::json!({"k": 1}), &[1, 2, 3]).unwrap();
        assert!(decode::<serde_json::Value>(b"ABCE", 1, &bytes).is_err());
        assert!(decode::<serde_json::Value>(b"ABCD", 2, &bytes).is_err());
        assert!(decode::<serde_json::Value>(b"ABCD", 1, &bytes[..10]).is_err());
        let (h, payload) = decode::<serde_json::Value>(b"ABCD", 1, &bytes).unwrap();
        assert_eq!(h["k"], 1);
        assert_eq!(payload, &[1, 2, 3]);
    }

    #[test]
    fn truncated_float_payload_is_reported() {
        let err = read_f32s(&[0u8; 7], 2).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { expected: 8, found: 7 }));
    }
}
