//! Run configuration file (TOML).
//!
//! ```toml
//! [data]
//! weather_dir = "weather"        # grid stack directory
//! target_dir = "target"          # holds <sensor>.csv
//! sensor = "synthetic"
//! output_dir = "runs"
//!
//! [model]
//! kind = "tdc-lstm"              # or "tdc-unpwavenet"
//! window = 104
//! # square_side = 8
//! # bbox = { min_lon = 6.90, min_lat = 44.35, max_lon = 7.79, max_lat = 44.84 }
//!
//! [split]
//! train_end = "2016-01-01"
//! test_start = "2022-01-01"
//!
//! [training]
//! # preset = "00425010001"       # per-sensor learning rate and L2
//! learning_rate = 0.001
//! l2 = 0.0005
//! seed = 1
//! ensemble_size = 10
//! ```
//!
//! Relative paths are resolved against the directory of the file. Unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{BoundingBox, PrepConfig};
use crate::seqmods::ModelKind;
use crate::training::{sensor_preset, TrainConfig, DEFAULT_L2, DEFAULT_LEARNING_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub weather_dir: PathBuf,
    pub target_dir: PathBuf,
    pub sensor: String,
    pub output_dir: PathBuf,
}

fn default_window() -> usize {
    104
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub square_side: Option<usize>,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
    /// Refuse architectures whose size differs from the reference totals.
    #[serde(default = "default_true")]
    pub strict_parameter_count: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub preset: Option<String>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clipnorm: f64,
    pub seed: u64,
    pub ensemble_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            preset: None,
            learning_rate: None,
            l2: None,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            clipnorm: t.clipnorm,
            seed: 1,
            ensemble_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub split: SplitSection,
    #[serde(default)]
    pub training: TrainingSection,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.data.weather_dir, &mut cfg.data.target_dir, &mut cfg.data.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.sensor.trim().is_empty() {
            return Err(Error::Config("data.sensor must not be empty".into()));
        }
        if self.model.window == 0 {
            return Err(Error::Config("model.window must be at least 1".into()));
        }
        if self.split.train_end >= self.split.test_start {
            return Err(Error::Config(format!(
                "split.train_end {} must precede split.test_start {}",
                self.split.train_end, self.split.test_start
            )));
        }
        if self.model.square_side == Some(0) {
            return Err(Error::Config("model.square_side must be positive".into()));
        }
        if let Some(b) = &self.model.bbox {
            if !(b.min_lon < b.max_lon && b.min_lat < b.max_lat) {
                return Err(Error::Config(format!("model.bbox is empty: {b:?}")));
            }
        }
        if self.training.ensemble_size == 0 {
            return Err(Error::Config("training.ensemble_size must be at least 1".into()));
        }
        if let Some(p) = &self.training.preset {
            if sensor_preset(p, self.model.kind).is_none() {
                return Err(Error::Config(format!("unknown training.preset {p:?}")));
            }
        }
        self.train_config().validate()
    }

    pub fn target_path(&self) -> PathBuf {
        self.data.target_dir.join(format!("{}.csv", self.data.sensor))
    }

    /// `<output_dir>/<sensor>/<model kind>`
    pub fn run_dir(&self) -> PathBuf {
        self.data.output_dir.join(&self.data.sensor).join(self.model.kind.name())
    }

    /// Explicit values win over the preset, the preset over the defaults.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let preset = t.preset.as_deref().and_then(|p| sensor_preset(p, self.model.kind));
        TrainConfig {
            learning_rate: t.learning_rate.or(preset.map(|p| p.0)).unwrap_or(DEFAULT_LEARNING_RATE),
            l2: t.l2.or(preset.map(|p| p.1)).unwrap_or(DEFAULT_L2),
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            clipnorm: t.clipnorm,
            seeds: TrainConfig::seeds_from(t.seed, t.ensemble_size),
        }
    }

    pub fn prep_config(&self) -> PrepConfig {
        PrepConfig {
            window: self.model.window,
            bbox: self.model.bbox,
            square_side: self.model.square_side,
            train_end: self.split.train_end,
            test_start: self.split.test_start,
        }
    }
}
