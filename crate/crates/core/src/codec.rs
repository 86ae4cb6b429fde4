//! Versioned model files: a 4-byte magic, one version byte, then a JSON body.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u8, supported: u8 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn encode<T: Serialize>(magic: [u8; 4], version: u8, value: &T) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(1024);
    out.extend_from_slice(&magic);
    out.push(version);
    serde_json::to_writer(&mut out, value)?;
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(magic: [u8; 4], supported: u8, bytes: &[u8]) -> Result<T, CodecError> {
    if bytes.len() < 5 || bytes[..4] != magic {
        return Err(CodecError::BadMagic { expected: magic, found: bytes.iter().take(4).copied().collect() });
    }
    let version = bytes[4];
    if version == 0 || version > supported {
        return Err(CodecError::UnsupportedVersion { found: version, supported });
    }
    Ok(serde_json::from_slice(&bytes[5..])?)
}

pub fn write_file<T: Serialize>(path: &Path, magic: [u8; 4], version: u8, value: &T) -> Result<(), CodecError> {
    fs::write(path, encode(magic, version, value)?)?;
    Ok(())
}

pub fn read_file<T: DeserializeOwned>(path: &Path, magic: [u8; 4], supported: u8) -> Result<T, CodecError> {
    decode(magic, supported, &fs::read(path)?)
}
