//! Feature table on disk: `<name>.bin` holds the magic `LDSFEAT\0`, a `u32`
//! version, `u64` rows and `u64` cols, then row-major little-endian `f32`;
//! `<name>.json` holds identities and cameras.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureTable;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"LDSFEAT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub rows: usize,
    pub cols: usize,
    pub identities: Vec<i64>,
    pub cameras: Vec<usize>,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `path` (binary) and its `.json` sidecar.
pub fn save_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let (rows, cols) = table.vectors.dim();
    let mut out = Vec::with_capacity(28 + rows * cols * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in table.vectors.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let side = FeatureSidecar {
        rows,
        cols,
        identities: table.identities.clone(),
        cameras: table.cameras.clone(),
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

pub fn load_feature_table(path: &Path) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 28 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad(path, "not a feature table (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let data = &bytes[28..];
    if data.len() != rows * cols * 4 {
        return Err(bad(path, format!("expected {rows}x{cols} values, found {} bytes", data.len())));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let sp = sidecar_path(path);
    let side: FeatureSidecar = serde_json::from_slice(&fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    if side.rows != rows || side.cols != cols {
        return Err(bad(&sp, "sidecar shape disagrees with the binary"));
    }
    let vectors = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    FeatureTable::new(vectors, side.identities, side.cameras)
}
