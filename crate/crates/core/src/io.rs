//! On-disk codecs shared by datasets, checkpoints, projector caches and
//! sample dumps: a `*.json` header next to a blob of little-endian `f64`s.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a blob of little-endian `f64`s, rejecting ragged lengths and
/// non-finite entries.
pub fn decode_f64s(bytes: &[u8], what: &'static str) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::format(what, format!("length {} is not a multiple of 8", bytes.len())));
    }
    let mut out = Vec::with_capacity(bytes.len() / 8);
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::format(what, format!("entry {k} is not finite")));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline. Field order follows the struct, so
/// equal values always serialize to equal bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable header");
    out.push(b'\n');
    out
}

pub fn from_json_bytes<T: DeserializeOwned>(bytes: &[u8], what: &'static str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::format(what, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    from_json_bytes(&read_bytes(path)?, what)
}

/// Checks a header's format version.
pub(crate) fn check_version(what: &'static str, found: u32, expected: u32) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::format(what, format!("format version {found}, expected {expected}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let v = vec![0.0, -0.0, 1.0 / 3.0, f64::MIN_POSITIVE, 1e308, -2.5e-300];
        let back = decode_f64s(&encode_f64s(&v), "blob").unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ragged_and_non_finite_rejected() {
        assert!(decode_f64s(&[0u8; 7], "blob").is_err());
        assert!(decode_f64s(&f64::NAN.to_le_bytes(), "blob").is_err());
        assert!(decode_f64s(&f64::INFINITY.to_le_bytes(), "blob").is_err());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
