//! JSON checkpoints for [`ModelParams`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::write_atomic;

use super::params::{CellKind, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "sleepwake-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    cell_kind: CellKind,
    hidden_size: usize,
    input_size: usize,
    tensors: Vec<TensorEntry>,
}

pub fn checkpoint_to_json(params: &ModelParams) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        cell_kind: params.cell_kind,
        hidden_size: params.hidden_size,
        input_size: params.input_size,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorEntry {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("checkpoint serializes");
    s.push('\n');
    s
}

/// Parses a checkpoint, checking every tensor's name, shape and finiteness
/// against the architecture it declares.
pub fn checkpoint_from_json(text: &str) -> Result<ModelParams> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Shape(format!("unreadable checkpoint: {e}")))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Shape(format!("not a checkpoint (format `{}`)", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Shape(format!("unsupported checkpoint version {}", file.version)));
    }
    if file.hidden_size == 0 || file.input_size == 0 {
        return Err(Error::Shape("checkpoint declares an empty layer".into()));
    }
    let mut params = ModelParams::zeros(file.cell_kind, file.hidden_size, file.input_size);
    let expected: Vec<(String, [usize; 2])> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if expected.len() != file.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, architecture needs {}",
            file.tensors.len(),
            expected.len()
        )));
    }
    for ((dst, (name, shape)), entry) in params.tensors_mut().into_iter().zip(&expected).zip(&file.tensors) {
        if &entry.name != name || &entry.shape != shape || entry.data.len() != dst.len() {
            return Err(Error::Shape(format!(
                "tensor `{}` {:?} with {} values does not match expected `{name}` {:?}",
                entry.name,
                entry.shape,
                entry.data.len(),
                shape
            )));
        }
        dst.copy_from_slice(&entry.data);
    }
    params.check_finite()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, checkpoint_to_json(params).as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}
