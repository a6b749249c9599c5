//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CASCADE\0"
//! version  u32      currently 1
//! length   u64      byte length of the manifest
//! manifest JSON     {config, vocabs, tensors: [{name, kind, rows, cols}], meta}
//! data     f64 LE   every tensor, row-major, in manifest order
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use cascade_core::dataset::VocabSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelConfig;
use crate::model::{Cascade, ModelError};
use crate::params::ParamKind;

pub const MAGIC: &[u8; 8] = b"CASCADE\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("tensor {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tensor list does not match the configuration: {0}")]
    Tensors(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::NotFound(_) => "CHECKPOINT_NOT_FOUND",
            CheckpointError::Io(_) => "IO_ERROR",
            _ => "CHECKPOINT_CORRUPT",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    vocabs: VocabSet,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

pub fn to_bytes(model: &Cascade, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let manifest = Manifest {
        config: model.config.clone(),
        vocabs: model.vocabs.clone(),
        tensors: model
            .params
            .entries()
            .iter()
            .map(|e| TensorEntry {
                name: e.name.clone(),
                kind: e.kind,
                rows: e.tensor.rows(),
                cols: e.tensor.cols(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + model.params.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in model.params.entries() {
        for x in e.tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Parses a checkpoint, rebuilding the layout from its configuration and
/// checking every tensor name and shape against it.
pub fn from_bytes(
    mut bytes: &[u8],
) -> Result<(Cascade, BTreeMap<String, String>), CheckpointError> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(take(&mut bytes, len)?)?;
    let mut model = Cascade::layout_only(manifest.config, manifest.vocabs)?;
    if manifest.tensors.len() != model.params.len() {
        return Err(CheckpointError::Tensors(format!(
            "{} tensors stored, {} expected",
            manifest.tensors.len(),
            model.params.len()
        )));
    }
    for (entry, id) in manifest
        .tensors
        .iter()
        .zip(model.params.ids().collect::<Vec<_>>())
    {
        if entry.name != model.params.name(id) {
            return Err(CheckpointError::Tensors(format!(
                "found {}, expected {}",
                entry.name,
                model.params.name(id)
            )));
        }
        let expected = model.params.tensor(id).shape();
        if (entry.rows, entry.cols) != expected {
            return Err(CheckpointError::Shape {
                name: entry.name.clone(),
                expected,
                found: (entry.rows, entry.cols),
            });
        }
        for x in model.params.tensor_mut(id).data_mut() {
            *x = f64::from_le_bytes(take(&mut bytes, 8)?.try_into().unwrap());
        }
    }
    if !bytes.is_empty() {
        return Err(CheckpointError::Tensors("trailing bytes".into()));
    }
    Ok((model, manifest.meta))
}

pub fn save(
    model: &Cascade,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(model, meta))?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Cascade, BTreeMap<String, String>), CheckpointError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CheckpointError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    from_bytes(&bytes)
}
