//! Parameter blobs with JSON sidecar manifests.
//!
//! Blob layout: 8-byte magic `MEMOCKPT`, `u32` format version, `u64` value
//! count, then that many little-endian `f64` values. The manifest lives next
//! to the blob as `<blob>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MEMOCKPT";
const VERSION: u32 = 1;

pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut name = blob.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_params(params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {count} parameters, found {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save<M: Serialize>(blob: impl AsRef<Path>, params: &[f64], manifest: &M) -> Result<()> {
    let blob = blob.as_ref();
    if let Some(parent) = blob.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(blob, encode_params(params))?;
    fs::write(manifest_path(blob), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(blob: impl AsRef<Path>) -> Result<(Vec<f64>, M)> {
    let blob = blob.as_ref();
    let bytes = fs::read(blob).map_err(|e| Error::NotFound(format!("{}: {e}", blob.display())))?;
    let params = decode_params(&bytes)?;
    let manifest_file = manifest_path(blob);
    let text = fs::read_to_string(&manifest_file)
        .map_err(|e| Error::NotFound(format!("{}: {e}", manifest_file.display())))?;
    Ok((params, serde_json::from_str(&text)?))
}
