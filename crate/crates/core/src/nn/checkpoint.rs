//! Parameter checkpoints as JSON.
//!
//! ```text
//! {
//!   "format": "dpreg-checkpoint",
//!   "version": 1,
//!   "meta": { ... free-form model metadata ... },
//!   "params": { "<name>": { "shape": [r, c], "values": [...] }, ... }
//! }
//! ```
//!
//! Values are written with shortest round-trip formatting, so save/load is
//! lossless. Optimizer moments are not stored.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dpreg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    meta: serde_json::Value,
    params: BTreeMap<String, TensorRecord>,
}

pub fn checkpoint_to_string(params: &ParamStore, meta: &serde_json::Value) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        meta: meta.clone(),
        params: params
            .iter()
            .map(|(k, t)| {
                (
                    k.to_string(),
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_str(text: &str) -> Result<(ParamStore, serde_json::Value)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let mut store = ParamStore::new();
    for (name, rec) in file.params {
        store.insert(name, Tensor::from_vec(&rec.shape, rec.values)?);
    }
    Ok((store, file.meta))
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(params, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
