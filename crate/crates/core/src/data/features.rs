//! Image feature files: `<name>.bin` holds row-major little-endian `f32`
//! values, `<name>.json` holds `{"rows": N, "dim": D}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct FeatureHeader {
    pub rows: usize,
    pub dim: usize,
}

/// `(binary path, header path)` for a feature file given either path or
/// the bare stem.
pub fn feature_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut bin = stem.clone().into_os_string();
    bin.push(".bin");
    let mut json = stem.into_os_string();
    json.push(".json");
    (bin.into(), json.into())
}

pub fn read_features(path: &Path) -> Result<Vec<Vec<f32>>> {
    let (bin, json) = feature_paths(path);
    let header_text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let header: FeatureHeader = serde_json::from_slice(&header_text).map_err(|e| {
        let offset = byte_offset(&header_text, e.line(), e.column());
        Error::Format {
            path: json.clone(),
            offset,
            message: e.to_string(),
        }
    })?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.rows * header.dim * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: bin,
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "header declares {}x{} floats ({expected} bytes), file has {} bytes",
                header.rows,
                header.dim,
                bytes.len()
            ),
        });
    }
    if header.dim == 0 {
        return Ok(vec![Vec::new(); header.rows]);
    }
    let mut rows = Vec::with_capacity(header.rows);
    for chunk in bytes.chunks_exact(header.dim * 4) {
        rows.push(
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    Ok(rows)
}

pub fn write_features(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("feature rows of differing length"));
    }
    let (bin, json) = feature_paths(path);
    let mut bytes = Vec::with_capacity(rows.len() * dim * 4);
    for v in rows.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = serde_json::to_string(&FeatureHeader {
        rows: rows.len(),
        dim,
    })
    .expect("header serialises");
    fs::write(&json, header).map_err(|e| Error::io(&json, e))
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    offset.min(text.len()) as u64
}
