//! Versioned JSON checkpoints: the model configuration plus one flat array
//! per named tensor. Loading rebuilds the architecture from the configuration
//! and refuses missing, extra or mis-shaped tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::NormStats;
use crate::seqmods::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "wtdnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub sensor_id: String,
    pub config: ModelConfig,
    pub stats: Option<NormStats>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, sensor_id: &str, stats: Option<&NormStats>) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .map(|(name, p)| {
                (
                    name,
                    Tensor {
                        shape: p.shape.clone(),
                        data: p.data.clone(),
                    },
                )
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            sensor_id: sensor_id.to_string(),
            config: model.config.clone(),
            stats: stats.cloned(),
            tensors,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::zeros(&self.config)?;
        let mut seen = 0;
        for (name, p) in model.named_params_mut() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != p.shape || t.data.len() != p.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?} with {} values, expected {:?}",
                    t.shape,
                    t.data.len(),
                    p.shape
                )));
            }
            p.data.copy_from_slice(&t.data);
            seen += 1;
        }
        if seen != self.tensors.len() {
            let known: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = self.tensors.keys().filter(|k| !known.contains(k)).collect();
            return Err(Error::Invalid(format!("checkpoint has unknown tensors {extra:?}")));
        }
        Ok(model)
    }
}

pub fn checkpoint_file_name(seed: u64) -> String {
    format!("member-{seed:04}.json")
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(checkpoint)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Every `member-*.json` in `dir`, ordered by seed.
pub fn load_checkpoint_dir(dir: &Path) -> Result<Vec<Checkpoint>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("member-") && name.ends_with(".json") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no member checkpoints in {}", dir.display())));
    }
    let mut checkpoints = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    checkpoints.sort_by_key(|c| c.seed);
    Ok(checkpoints)
}
