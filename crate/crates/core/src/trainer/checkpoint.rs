use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, TrainConfig};
use crate::diffnum::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::generative::check_simplex;

pub const CHECKPOINT_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: String,
    config: ModelConfig,
    #[serde(default)]
    train_config: Option<TrainConfig>,
    basis_probs: Vec<f64>,
    params: Vec<ParamRecord>,
}

/// A model together with the training configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub train_config: Option<TrainConfig>,
}

pub fn checkpoint_to_string(model: &ModelParams, train_config: Option<&TrainConfig>) -> Result<String> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION.to_string(),
        config: model.config.clone(),
        train_config: train_config.cloned(),
        basis_probs: model.basis_probs.clone(),
        params: model
            .store
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn checkpoint_save(model: &ModelParams, train_config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let text = checkpoint_to_string(model, train_config)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Parses a checkpoint; `origin` names the source in errors.
pub fn checkpoint_from_str(text: &str, origin: &Path) -> Result<Checkpoint> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: origin.to_path_buf(),
        reason,
    };
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_str()) {
        Some(CHECKPOINT_VERSION) => {}
        Some(other) => {
            return Err(Error::Version {
                found: other.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            })
        }
        None => return Err(corrupt("missing `version`".into())),
    }
    let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))?;
    let mut model = ModelParams::new(file.config, 0).map_err(|e| corrupt(e.to_string()))?;
    check_simplex("basis_probs", &file.basis_probs, model.k()).map_err(|e| corrupt(e.to_string()))?;
    model.basis_probs = file.basis_probs;
    if file.params.len() != model.store.len() {
        return Err(corrupt(format!(
            "{} parameter tensors, expected {}",
            file.params.len(),
            model.store.len()
        )));
    }
    for rec in file.params {
        let id = model
            .store
            .find(&rec.name)
            .ok_or_else(|| corrupt(format!("unknown parameter `{}`", rec.name)))?;
        if model.store.value(id).shape() != rec.shape.as_slice() {
            return Err(corrupt(format!("parameter `{}` has shape {:?}", rec.name, rec.shape)));
        }
        *model.store.value_mut(id) = Tensor::new(rec.shape, rec.data).map_err(|e| corrupt(e.to_string()))?;
    }
    Ok(Checkpoint {
        model,
        train_config: file.train_config,
    })
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}
