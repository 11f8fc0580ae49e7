//! Little-endian matrix files and atomic writes.
//!
//! Layout shared by feature (`DMFT`) and motion (`DMMO`) files:
//! 4-byte magic, u32 version = 1, u32 rows, u32 cols, u32 fps, then
//! `rows * cols` f32 values row-major.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub fps: u32,
    pub data: Vec<f32>,
}

static TEMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let seq = TEMP_SEQ.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{name}.{}.{seq}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix(magic: &[u8; 4], m: &MatrixFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    out.extend_from_slice(&m.fps.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(magic: &[u8; 4], bytes: &[u8]) -> Result<MatrixFile> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let fps = word(16);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header {rows}x{cols} needs {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MatrixFile { rows, cols, fps, data })
}

pub fn read_matrix(magic: &[u8; 4], path: &Path) -> Result<MatrixFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(magic, &bytes)
}

pub fn write_matrix(magic: &[u8; 4], path: &Path, m: &MatrixFile) -> Result<()> {
    write_atomic(path, &encode_matrix(magic, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_magic_is_a_format_error() {
        let m = MatrixFile { rows: 1, cols: 2, fps: 60, data: vec![1.0, 2.0] };
        let bytes = encode_matrix(b"DMFT", &m);
        assert!(matches!(decode_matrix(b"DMMO", &bytes), Err(Error::Format(_))));
        assert_eq!(decode_matrix(b"DMFT", &bytes).unwrap(), m);
    }
}
