//! On-disk formats.
//!
//! Three binary layouts are used, each little-endian:
//!
//! * array container: 8-byte magic `DRCARR\0\x01`, two `u32` header fields,
//!   then `f32` values row-major. Disks store `(width, height)`, descriptor and
//!   encoded-vector files store `(count, dim)`. A JSON sidecar at
//!   `<path>.json` carries metadata, including a `kind` tag.
//! * model file: magic `DRCMODEL`, `u32` JSON header length, the JSON header,
//!   `u64` payload length, then `f64` payload values.
//! * codes file: magic `DRCCODES`, `u32` code count, `u32` bit count, then the
//!   codes as `u64` words, least significant bit first.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const ARRAY_MAGIC: [u8; 8] = *b"DRCARR\x00\x01";
pub const MODEL_MAGIC: [u8; 8] = *b"DRCMODEL";
pub const CODES_MAGIC: [u8; 8] = *b"DRCCODES";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Stable identifier of a fitted model: `kind` plus a hash of its parameters.
pub fn fingerprint(kind: &str, payload: &[f64]) -> String {
    let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
    format!("{kind}-{:016x}", crate::seed::fnv1a64(&bytes))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn write_array(path: &Path, header: (u32, u32), values: &[f32]) -> Result<()> {
    if header.0 as usize * header.1 as usize != values.len() {
        return Err(Error::Shape(format!(
            "array header {}x{} does not match {} values",
            header.0,
            header.1,
            values.len()
        )));
    }
    let mut buf = Vec::with_capacity(16 + 4 * values.len());
    buf.extend_from_slice(&ARRAY_MAGIC);
    buf.extend_from_slice(&header.0.to_le_bytes());
    buf.extend_from_slice(&header.1.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    create_parent(path)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<((u32, u32), Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..8] != ARRAY_MAGIC {
        return Err(Error::format(path, "missing array container magic"));
    }
    let a = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let b = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let n = a as usize * b as usize;
    let payload = &bytes[16..];
    if payload.len() != 4 * n {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(((a, b), values))
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(&side, e.to_string()))?;
    create_parent(&side)?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let side = sidecar_path(path);
    read_json(&side)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    create_parent(path)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes a model file: JSON header followed by an `f64` payload.
pub fn write_model<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(24 + json.len() + 8 * payload.len());
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    create_parent(path)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_model<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || bytes[..8] != MODEL_MAGIC {
        return Err(Error::format(path, "missing model file magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12 + hlen;
    if bytes.len() < hend + 8 {
        return Err(Error::format(path, "truncated model header"));
    }
    let header: H = serde_json::from_slice(&bytes[12..hend])
        .map_err(|e| Error::format(path, format!("bad model header: {e}")))?;
    let n = u64::from_le_bytes(bytes[hend..hend + 8].try_into().unwrap()) as usize;
    let payload = &bytes[hend + 8..];
    if payload.len() != 8 * n {
        return Err(Error::format(path, "model payload length mismatch"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Writes packed codes; every code must hold `bit_count / 64` words.
pub fn write_codes(path: &Path, bit_count: u32, codes: &[&[u64]]) -> Result<()> {
    let words = bit_count as usize / 64;
    let mut buf = Vec::with_capacity(16 + 8 * words * codes.len());
    buf.extend_from_slice(&CODES_MAGIC);
    buf.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&bit_count.to_le_bytes());
    for code in codes {
        if code.len() != words {
            return Err(Error::Shape(format!(
                "code has {} words, expected {words}",
                code.len()
            )));
        }
        for w in code.iter() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    create_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<(u32, Vec<Vec<u64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..8] != CODES_MAGIC {
        return Err(Error::format(path, "missing codes file magic"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let bits = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if bits == 0 || bits % 64 != 0 {
        return Err(Error::format(path, format!("bit count {bits} is not a positive multiple of 64")));
    }
    let words = bits as usize / 64;
    let payload = &bytes[16..];
    if payload.len() != 8 * words * count {
        return Err(Error::format(path, "codes payload length mismatch"));
    }
    let codes = payload
        .chunks_exact(8 * words)
        .map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((bits, codes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rdc");
        write_array(&p, (2, 1), &[1.0, -2.5]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"DRCARR\x00\x01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(read_array(&p).unwrap(), ((2, 1), vec![1.0, -2.5]));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rdc");
        fs::write(&p, b"DRCARR\x00\x01\x02\x00\x00\x00\x02\x00\x00\x00").unwrap();
        assert!(matches!(read_array(&p), Err(Error::Format { .. })));
        fs::write(&p, b"nonsense").unwrap();
        assert!(matches!(read_array(&p), Err(Error::Format { .. })));
        assert!(matches!(read_model::<serde_json::Value>(&p), Err(Error::Format { .. })));
        assert!(matches!(read_codes(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn model_and_codes_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.model");
        write_model(&p, &serde_json::json!({"kind": "x", "d": 3}), &[0.1, 0.2, 1e-300]).unwrap();
        let (h, v): (serde_json::Value, _) = read_model(&p).unwrap();
        assert_eq!(h["d"], 3);
        assert_eq!(v, vec![0.1, 0.2, 1e-300]);

        let c = dir.path().join("c.codes");
        let a = [u64::MAX, 1];
        let b = [0, 1 << 63];
        write_codes(&c, 128, &[&a, &b]).unwrap();
        let (bits, codes) = read_codes(&c).unwrap();
        assert_eq!(bits, 128);
        assert_eq!(codes, vec![a.to_vec(), b.to_vec()]);
    }
}
