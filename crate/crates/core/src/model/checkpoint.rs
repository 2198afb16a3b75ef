//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `LDSCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor as little-endian `f32` in header order. Readers accept any file
//! with the same major version and ignore unknown header keys, so adding
//! fields is a minor change.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, MultiBranchModel};
use crate::augment::BranchTransform;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LDSCKPT\0";
/// Major version in the high 16 bits, minor in the low 16.
pub const FORMAT_VERSION: u32 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub branch_plan: Vec<BranchTransform>,
    pub num_classes: usize,
    pub epoch: usize,
    pub iteration: usize,
    /// Full run configuration snapshot, opaque at this layer.
    #[serde(default)]
    pub run_config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut MultiBranchModel,
    plan: &[BranchTransform],
    epoch: usize,
    iteration: usize,
    run_config: serde_json::Value,
) -> Result<()> {
    if plan.len() != model.num_branches() {
        return Err(Error::Shape(format!(
            "branch plan of length {} for {} branches",
            plan.len(),
            model.num_branches()
        )));
    }
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, p| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len();
        for v in p.value.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = CheckpointHeader {
        model: model.config().clone(),
        branch_plan: plan.to_vec(),
        num_classes: model.num_classes(),
        epoch,
        iteration,
        run_config,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads the header and raw tensor data without building a model.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version >> 16 != FORMAT_VERSION >> 16 {
        return Err(bad(path, format!("unsupported major version {}", version >> 16)));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| bad(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let raw = &bytes[20 + len..];
    if raw.len() % 4 != 0 {
        return Err(bad(path, "data section is not a whole number of f32 values"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, data))
}

/// Rebuilds the model described by the header and loads its tensors.
pub fn load_checkpoint(path: &Path) -> Result<(MultiBranchModel, CheckpointHeader)> {
    let (header, data) = read_checkpoint(path)?;
    let mut model = MultiBranchModel::new(&header.model, &header.branch_plan, header.num_classes, 0)?;
    let table: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut failure = None;
    let mut seen = 0;
    model.visit("", &mut |name, p| {
        if failure.is_some() {
            return;
        }
        let Some(t) = table.get(name) else {
            failure = Some(format!("missing tensor `{name}`"));
            return;
        };
        if t.shape != p.value.shape() {
            failure = Some(format!("tensor `{name}` has shape {:?}, model expects {:?}", t.shape, p.value.shape()));
            return;
        }
        let Some(src) = data.get(t.offset..t.offset + p.value.len()) else {
            failure = Some(format!("tensor `{name}` runs past the data section"));
            return;
        };
        for (d, &s) in p.value.iter_mut().zip(src) {
            *d = s;
        }
        seen += 1;
    });
    if let Some(reason) = failure {
        return Err(bad(path, reason));
    }
    if seen != header.tensors.len() {
        return Err(bad(path, "checkpoint holds tensors the model does not have"));
    }
    Ok((model, header))
}
