//! The commands behind the `wtdnet` binary, as library functions.
//!
//! A run directory `<output_dir>/<sensor>/<model kind>` holds:
//!
//! * `member-NNNN.json`: one checkpoint per ensemble seed
//! * `manifest.json`: configuration, seeds, per-epoch losses, timing, sizes
//! * `losses.csv`: per-member, per-epoch training and validation MSE
//! * `report_<split>.txt` / `report_<split>.csv`: skill metrics
//! * `predictions_<sensor>_<model>_<split>.csv` and `forecast_*.svg`
//!
//! Each command holds `<run dir>/.lock` for its whole duration.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::{checkpoint_file_name, load_checkpoint_dir, save_checkpoint, Checkpoint};
use crate::config::{DataSection, ModelSection, RunConfig, SplitSection, TrainingSection};
use crate::dataio::{
    generate_synthetic_case_with, load_grid_stack, load_target_series, synthetic_geometry, synthetic_start_date,
    write_predictions, write_synthetic_case, SyntheticOptions,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, render_report_table, write_reports_csv, EvaluationReport};
use crate::plot::{plot_file_name, plot_forecast};
use crate::preprocess::{prepare_dataset, synthetic_split_dates, NormStats, SplitSet, WindowedDataset};
use crate::seqmods::{Model, ModelConfig, ModelKind};
use crate::training::{ensemble_predict, run_training, EnsemblePrediction, RunManifest};

pub const CONFIG_FILE: &str = "run.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const LOCK_FILE: &str = ".lock";

/// Exclusive claim on a directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Invalid(format!(
                "{} is held by another command; remove it if no command is running",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Flag values that replace config entries.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub sensor: Option<String>,
    pub seed: Option<u64>,
    pub ensemble_size: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(k) = self.model {
            cfg.model.kind = k;
        }
        if let Some(s) = &self.sensor {
            cfg.data.sensor = s.clone();
        }
        if let Some(s) = self.seed {
            cfg.training.seed = s;
        }
        if let Some(n) = self.ensemble_size {
            cfg.training.ensemble_size = n;
        }
        if let Some(o) = &self.out {
            cfg.data.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutputs {
    pub weather_dir: PathBuf,
    pub target_path: PathBuf,
    pub config_path: PathBuf,
}

/// Writes a synthetic case under `out` together with a ready-to-train
/// `run.toml` whose split leaves room for three gap-separated sets.
pub fn synth(out: &Path, seed: u64, weeks: usize, side: usize, window: usize) -> Result<SynthOutputs> {
    if window == 0 || side == 0 {
        return Err(Error::Invalid("window and side must be positive".into()));
    }
    if weeks < 3 * window {
        return Err(Error::Invalid(format!(
            "{weeks} weeks is too short: a window of {window} weeks needs at least {} weeks so that \
             training, validation and test sets can be separated by gaps",
            3 * window
        )));
    }
    let (train_end, test_start) = synthetic_split_dates(synthetic_start_date(), weeks, window)?;
    let opts = SyntheticOptions {
        window,
        ..Default::default()
    };
    let (weather, target) = generate_synthetic_case_with(seed, &synthetic_geometry(side), weeks, &opts)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (weather_dir, target_path) = write_synthetic_case(&weather, &target, out)?;
    let cfg = RunConfig {
        data: DataSection {
            weather_dir: "weather".into(),
            target_dir: "target".into(),
            sensor: target.sensor_id.clone(),
            output_dir: "runs".into(),
        },
        model: ModelSection {
            kind: ModelKind::TdcLstm,
            window,
            square_side: Some(side),
            bbox: None,
            strict_parameter_count: true,
        },
        split: SplitSection { train_end, test_start },
        training: TrainingSection {
            seed,
            ..Default::default()
        },
    };
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    Ok(SynthOutputs {
        weather_dir,
        target_path,
        config_path,
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<WindowedDataset> {
    let weather = load_grid_stack(&cfg.data.weather_dir)?;
    let target = load_target_series(cfg.target_path())?;
    prepare_dataset(&weather, &target, &cfg.prep_config())
}

/// Architecture for the configured kind sized to the prepared frames.
pub fn model_config(cfg: &RunConfig, data: &WindowedDataset) -> ModelConfig {
    let mut m = ModelConfig::new(cfg.model.kind);
    m.window = data.window;
    m.frame_height = data.height;
    m.frame_width = data.width;
    m.in_channels = data.channels;
    m
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub manifest: RunManifest,
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutputs> {
    let run_dir = cfg.run_dir();
    let _lock = DirLock::acquire(&run_dir)?;
    let data = load_dataset(cfg)?;
    let model_cfg = model_config(cfg, &data);
    let (ensemble, manifest) = run_training(&data, &model_cfg, &cfg.train_config(), cfg.model.strict_parameter_count)?;

    // stale members from an earlier, larger ensemble would join the next evaluation
    for entry in fs::read_dir(&run_dir).map_err(|e| Error::io(&run_dir, e))? {
        let path = entry.map_err(|e| Error::io(&run_dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("member-") && name.ends_with(".json") {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let mut checkpoints = Vec::new();
    for m in &ensemble.members {
        let path = run_dir.join(checkpoint_file_name(m.seed));
        save_checkpoint(&Checkpoint::from_model(&m.model, m.seed, &data.sensor_id, Some(&data.stats)), &path)?;
        checkpoints.push(path);
    }
    let manifest_path = run_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    write_losses(&manifest, &run_dir.join(LOSSES_FILE))?;
    Ok(TrainOutputs {
        run_dir,
        checkpoints,
        manifest,
    })
}

fn write_losses(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(["seed", "epoch", "train_mse", "val_mse", "batch_loss"]).map_err(io)?;
    for (seed, h) in manifest.seeds.iter().zip(&manifest.histories) {
        for r in &h.epochs {
            let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
            let batch = r.batch_loss.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([seed.to_string(), r.epoch.to_string(), r.train_mse.to_string(), val, batch])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ensemble members restored from `dir`; they must match the dataset they
/// are about to be applied to.
pub fn load_ensemble(dir: &Path, data: &WindowedDataset, kind: ModelKind) -> Result<Vec<Model>> {
    let checkpoints = load_checkpoint_dir(dir)?;
    let mut models = Vec::with_capacity(checkpoints.len());
    for c in &checkpoints {
        let model = c.to_model()?;
        if model.kind() != kind {
            return Err(Error::Invalid(format!(
                "checkpoint for seed {} in {} is a {} model, expected {kind}",
                c.seed,
                dir.display(),
                model.kind()
            )));
        }
        let m = &model.config;
        if (m.window, m.frame_height, m.frame_width, m.in_channels)
            != (data.window, data.height, data.width, data.channels)
        {
            return Err(Error::Shape(format!(
                "checkpoint for seed {} expects {}x{}x{} frames over {} weeks, data has {}x{}x{} over {}",
                c.seed, m.frame_height, m.frame_width, m.in_channels, m.window, data.height, data.width, data.channels,
                data.window
            )));
        }
        if let Some(stats) = &c.stats {
            check_stats(stats, &data.stats, c.seed)?;
        }
        models.push(model);
    }
    Ok(models)
}

fn check_stats(saved: &NormStats, current: &NormStats, seed: u64) -> Result<()> {
    if saved != current {
        return Err(Error::Invalid(format!(
            "checkpoint for seed {seed} was normalized with different training statistics; \
             the data or split changed since training"
        )));
    }
    Ok(())
}

pub fn checkpoint_dir_or_default(cfg: &RunConfig, dir: Option<&Path>) -> PathBuf {
    dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.run_dir())
}

pub fn ensemble_prediction(cfg: &RunConfig, checkpoint_dir: &Path, split: SplitSet) -> Result<(WindowedDataset, EnsemblePrediction)> {
    let data = load_dataset(cfg)?;
    let models = load_ensemble(checkpoint_dir, &data, cfg.model.kind)?;
    let refs: Vec<&Model> = models.iter().collect();
    let pred = ensemble_predict(&refs, &data, split)?;
    Ok((data, pred))
}

/// Metrics of the ensemble mean against the observations.
pub fn report_from_prediction(pred: &EnsemblePrediction, data: &WindowedDataset, kind: ModelKind, split: SplitSet) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        sensor_id: data.sensor_id.clone(),
        model: kind.name().to_string(),
        split: split.name().to_string(),
        metrics: compute_metrics(&pred.mean, &pred.observed, &data.stats.target)?,
    })
}

#[derive(Debug)]
pub struct EvaluateOutputs {
    pub report: EvaluationReport,
    pub table_path: PathBuf,
    pub csv_path: PathBuf,
}

pub fn evaluate(cfg: &RunConfig, checkpoint_dir: Option<&Path>, split: SplitSet) -> Result<EvaluateOutputs> {
    let ck = checkpoint_dir_or_default(cfg, checkpoint_dir);
    let _lock = DirLock::acquire(&cfg.run_dir())?;
    let (data, pred) = ensemble_prediction(cfg, &ck, split)?;
    let report = report_from_prediction(&pred, &data, cfg.model.kind, split)?;
    let run_dir = cfg.run_dir();
    let table_path = run_dir.join(format!("report_{}.txt", split.name()));
    let csv_path = run_dir.join(format!("report_{}.csv", split.name()));
    let table = render_report_table(std::slice::from_ref(&report));
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    write_reports_csv(std::slice::from_ref(&report), &csv_path)?;
    Ok(EvaluateOutputs {
        report,
        table_path,
        csv_path,
    })
}

pub fn predictions_path(cfg: &RunConfig, split: SplitSet) -> PathBuf {
    cfg.run_dir()
        .join(format!("predictions_{}_{}_{}.csv", cfg.data.sensor, cfg.model.kind.name(), split.name()))
}

pub fn predict(cfg: &RunConfig, checkpoint_dir: Option<&Path>, split: SplitSet) -> Result<PathBuf> {
    let ck = checkpoint_dir_or_default(cfg, checkpoint_dir);
    let _lock = DirLock::acquire(&cfg.run_dir())?;
    let (_, pred) = ensemble_prediction(cfg, &ck, split)?;
    let path = predictions_path(cfg, split);
    write_predictions(&pred.dates, &pred.mean, &pred.std, &path)?;
    Ok(path)
}

/// Writes the forecast figure and, alongside it, the prediction CSV it shows.
pub fn plot(cfg: &RunConfig, checkpoint_dir: Option<&Path>, split: SplitSet) -> Result<(PathBuf, PathBuf)> {
    let ck = checkpoint_dir_or_default(cfg, checkpoint_dir);
    let _lock = DirLock::acquire(&cfg.run_dir())?;
    let (_, pred) = ensemble_prediction(cfg, &ck, split)?;
    let csv_path = predictions_path(cfg, split);
    write_predictions(&pred.dates, &pred.mean, &pred.std, &csv_path)?;
    let svg = cfg
        .run_dir()
        .join(plot_file_name(&cfg.data.sensor, cfg.model.kind.name(), split.name()));
    let title = format!("{} {} ({} set)", cfg.data.sensor, cfg.model.kind, split.name());
    plot_forecast(&pred, &title, &svg)?;
    let size = File::open(&svg).and_then(|f| f.metadata()).map_err(|e| Error::io(&svg, e))?.len();
    if size == 0 {
        return Err(Error::Invalid(format!("{} is empty", svg.display())));
    }
    Ok((csv_path, svg))
}
