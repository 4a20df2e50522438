//! Self-describing JSON dump of a configuration and every parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::params::{ModelParams, ParamId};

pub const CHECKPOINT_VERSION: &str = "adaptisent-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    config: RunConfig,
    tensors: Vec<TensorRecord>,
}

pub fn checkpoint_to_string(config: &RunConfig, params: &ModelParams) -> String {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION.to_string(),
        config: config.clone(),
        tensors: params
            .iter()
            .map(|(id, t)| TensorRecord {
                name: id.name().to_string(),
                shape: [t.rows(), t.cols()],
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
}

/// Parses a checkpoint; tensors may appear in any order but every
/// parameter must be present exactly once with the shape the stored
/// configuration implies.
pub fn checkpoint_from_str(text: &str) -> Result<(RunConfig, ModelParams)> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version `{}`, expected `{CHECKPOINT_VERSION}`",
            file.version
        )));
    }
    file.config.validate()?;
    let mut slots: Vec<Option<Tensor>> = vec![None; ParamId::ALL.len()];
    for rec in file.tensors {
        let id =
            ParamId::from_name(&rec.name).ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", rec.name)))?;
        if slots[id.slot()].is_some() {
            return Err(Error::Checkpoint(format!("tensor `{}` appears twice", rec.name)));
        }
        let t = Tensor::from_vec(rec.shape[0], rec.shape[1], rec.data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", rec.name)))?;
        if !t.is_finite() {
            return Err(Error::Checkpoint(format!("tensor `{}` has non-finite entries", rec.name)));
        }
        slots[id.slot()] = Some(t);
    }
    let tensors = slots
        .into_iter()
        .zip(ParamId::ALL)
        .map(|(t, id)| t.ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", id.name()))))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(&file.config, tensors)?;
    Ok((file.config, params))
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, ModelParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
