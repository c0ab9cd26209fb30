//! Minibatch Nesterov SGD with L2 decay and global-norm clipping, seeded
//! ensembles and ensemble prediction.

use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ParamRole, Parameterized};
use crate::preprocess::{SplitSet, WindowedDataset};
use crate::seqmods::{batch_gradient, build_model, count_parameters, mean_squared_error, predict, Model, ModelConfig, ModelKind, ParameterCount};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_L2: f64 = 0.0005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clipnorm: f64,
    /// One ensemble member per seed.
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            l2: DEFAULT_L2,
            momentum: 0.9,
            epochs: 80,
            batch_size: 8,
            clipnorm: 1.0,
            seeds: (1..=10).collect(),
        }
    }
}

impl TrainConfig {
    /// Consecutive seeds `first, first + 1, ...`.
    pub fn seeds_from(first: u64, count: usize) -> Vec<u64> {
        (0..count as u64).map(|i| first + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.clipnorm > 0.0) {
            return bad("clipnorm must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("ensemble seeds must be distinct");
        }
        Ok(())
    }
}

/// Learning rate and L2 coefficient tuned per sensor and model kind.
/// Sensors are matched by code or by town name, case-insensitively.
pub fn sensor_preset(sensor: &str, kind: ModelKind) -> Option<(f64, f64)> {
    let s = sensor.trim().to_ascii_lowercase();
    let row = match s.as_str() {
        "00425010001" | "vottignasco" => [(0.001, 0.0025), (0.0025, 0.0075)],
        "00421510001" | "savigliano" => [(0.001, 0.00075), (0.001, 0.0075)],
        "00417910001" | "racconigi" => [(0.001, 0.0005), (0.001, 0.0075)],
        _ => return None,
    };
    Some(match kind {
        ModelKind::TdcLstm => row[0],
        ModelKind::TdcUnpWaveNet => row[1],
    })
}

/// Weights drawn uniformly from `±sqrt(3 / fan_in)` (standard deviation
/// `1 / sqrt(fan_in)`), biases zero, LSTM forget-gate biases one.
///
/// The fan-in is the product of all but the last dimension, except for the
/// LSTM recurrent kernel, whose fan-in counts all four gate blocks (`4H`).
/// That gives its entries the variance of an orthogonal `H x 4H` matrix and
/// keeps the leaky-ReLU recurrence away from the unstable regime.
pub fn init_parameters(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in model.named_params_mut() {
        match p.role {
            ParamRole::Weight => {
                let fan_in: usize = if name.ends_with("lstm.recurrent") {
                    p.shape[1]
                } else {
                    p.shape[..p.shape.len() - 1].iter().product()
                };
                let limit = (3.0 / fan_in.max(1) as f64).sqrt();
                p.data.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
            }
            ParamRole::Bias => p.fill(0.0),
        }
    }
    if let crate::seqmods::Head::Lstm(head) = &mut model.head {
        let units = head.lstm.units();
        head.lstm.bias.data[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
    }
}

pub fn l2_penalty(model: &Model, l2: f64) -> f64 {
    model
        .params()
        .iter()
        .filter(|(_, p)| p.role == ParamRole::Weight)
        .flat_map(|(_, p)| p.data.iter())
        .map(|w| l2 * w * w)
        .sum()
}

/// Adds the gradient `2 * l2 * w` of the weight decay term.
pub fn add_l2_gradient(model: &Model, grad: &mut Model, l2: f64) {
    if l2 == 0.0 {
        return;
    }
    for ((_, p), g) in model.params().into_iter().zip(grad.params_mut()) {
        if p.role == ParamRole::Weight {
            for (gv, w) in g.data.iter_mut().zip(&p.data) {
                *gv += 2.0 * l2 * w;
            }
        }
    }
}

pub fn global_norm(grad: &Model) -> f64 {
    grad.params()
        .iter()
        .flat_map(|(_, p)| p.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the whole gradient so its global norm is at most `clipnorm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut Model, clipnorm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > clipnorm {
        let scale = clipnorm / norm;
        for p in grad.params_mut() {
            p.data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Nesterov momentum in the form `v <- m v - lr g; w <- w + m v - lr g`.
pub struct Nesterov {
    velocity: Model,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Nesterov {
    pub fn new(model: &Model, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: model.zeros_like(),
            learning_rate,
            momentum,
        }
    }

    pub fn step(&mut self, model: &mut Model, grad: &Model) {
        let (lr, m) = (self.learning_rate, self.momentum);
        for ((w, v), g) in model
            .params_mut()
            .into_iter()
            .zip(self.velocity.params_mut())
            .zip(grad.params())
        {
            for ((wi, vi), gi) in w.data.iter_mut().zip(v.data.iter_mut()).zip(&g.1.data) {
                *vi = m * *vi - lr * gi;
                *wi += m * *vi - lr * gi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// MSE of the normalized training targets in inference mode after the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Mean minibatch loss seen during the epoch (with dropout); absent for epoch 0.
    pub batch_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains `model` in place for `cfg.epochs` epochs. Record 0 of the history
/// holds the losses before the first update.
pub fn train_local_model(model: &mut Model, data: &WindowedDataset, cfg: &TrainConfig, seed: u64) -> Result<History> {
    cfg.validate()?;
    let train = data.indices(SplitSet::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit("no training samples".into()));
    }
    let val = data.indices(SplitSet::Val);
    let mut shuffle_rng = stream_rng(seed, 1);
    let mut dropout_rng = stream_rng(seed, 2);
    let mut opt = Nesterov::new(model, cfg.learning_rate, cfg.momentum);
    let evaluate = |m: &Model| -> Result<(f64, Option<f64>)> {
        let t = mean_squared_error(m, data, &train)?;
        let v = if val.is_empty() { None } else { Some(mean_squared_error(m, data, &val)?) };
        Ok((t, v))
    };

    let mut history = History::default();
    let (train_mse, val_mse) = evaluate(model)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_mse,
        val_mse,
        batch_loss: None,
    });
    let mut order = train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grad) = batch_gradient(model, data, batch, Some(&mut dropout_rng))?;
            add_l2_gradient(model, &mut grad, cfg.l2);
            let norm = clip_global_norm(&mut grad, cfg.clipnorm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(model, &grad);
            loss_sum += loss;
        }
        let (train_mse, val_mse) = evaluate(model)?;
        if !train_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: n_batches,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            batch_loss: Some(loss_sum / n_batches as f64),
        });
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub seed: u64,
    pub model: Model,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<Member>,
}

impl Ensemble {
    pub fn kind(&self) -> Option<ModelKind> {
        self.members.first().map(|m| m.model.kind())
    }
}

/// Builds one model per seed (initialized from that seed) and trains the
/// members in parallel; results do not depend on scheduling.
pub fn train_ensemble(data: &WindowedDataset, model_config: &ModelConfig, cfg: &TrainConfig, tripwire: bool) -> Result<Ensemble> {
    cfg.validate()?;
    let members: Vec<Result<Member>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Result<Member> {
                let mut model = build_model(model_config, seed, tripwire)?;
                let history = train_local_model(&mut model, data, cfg, seed)?;
                Ok(Member { seed, model, history })
            };
            run().map_err(|e| Error::Member {
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    Ok(Ensemble {
        members: members.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Per-date ensemble mean and population standard deviation in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub dates: Vec<NaiveDate>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub observed: Vec<f64>,
    /// `members[k][i]`: member `k` at date `i`, in meters.
    pub members: Vec<Vec<f64>>,
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn ensemble_predict(models: &[&Model], data: &WindowedDataset, set: SplitSet) -> Result<EnsemblePrediction> {
    if models.is_empty() {
        return Err(Error::Invalid("ensemble has no members".into()));
    }
    let idx = data.indices(set);
    if idx.is_empty() {
        return Err(Error::EmptySplit(format!("the {} split has no samples", set.name())));
    }
    let members: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| {
            predict(m, data, &idx).map(|z| z.into_iter().map(|v| data.stats.denormalize_target(v)).collect())
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(idx.len());
    let mut std = Vec::with_capacity(idx.len());
    let mut column = vec![0.0; members.len()];
    for i in 0..idx.len() {
        for (c, m) in column.iter_mut().zip(&members) {
            *c = m[i];
        }
        let (mu, sd) = mean_and_std(&column);
        mean.push(mu);
        std.push(sd);
    }
    Ok(EnsemblePrediction {
        dates: idx.iter().map(|&i| data.samples[i].date).collect(),
        mean,
        std,
        observed: idx.iter().map(|&i| data.samples[i].y).collect(),
        members,
    })
}

/// Record of one training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub sensor_id: String,
    pub parameter_count: ParameterCount,
    pub seeds: Vec<u64>,
    pub histories: Vec<History>,
    pub wall_clock_seconds: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
}

/// Trains an ensemble and assembles its manifest.
pub fn run_training(data: &WindowedDataset, model_config: &ModelConfig, cfg: &TrainConfig, tripwire: bool) -> Result<(Ensemble, RunManifest)> {
    let start = Instant::now();
    let ensemble = train_ensemble(data, model_config, cfg, tripwire)?;
    let parameter_count = ensemble
        .members
        .first()
        .map(|m| count_parameters(&m.model))
        .unwrap_or(ParameterCount { total: 0, blocks: Vec::new() });
    let manifest = RunManifest {
        model: model_config.clone(),
        training: cfg.clone(),
        sensor_id: data.sensor_id.clone(),
        parameter_count,
        seeds: ensemble.members.iter().map(|m| m.seed).collect(),
        histories: ensemble.members.iter().map(|m| m.history.clone()).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        train_samples: data.count(SplitSet::Train),
        val_samples: data.count(SplitSet::Val),
        test_samples: data.count(SplitSet::Test),
    };
    Ok((ensemble, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmods::ModelConfig;

    fn small_config(kind: ModelKind) -> ModelConfig {
        let mut c = ModelConfig::new(kind);
        c.window = 16;
        c.frame_height = 5;
        c.frame_width = 5;
        c.unp_layers = 2;
        c
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let cfg = ModelConfig::new(ModelKind::TdcLstm);
        let a = build_model(&cfg, 3, true).unwrap();
        let b = build_model(&cfg, 3, true).unwrap();
        let c = build_model(&cfg, 4, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let crate::seqmods::Head::Lstm(head) = &a.head else { panic!() };
        let units = head.lstm.units();
        for (i, &v) in head.lstm.bias.data.iter().enumerate() {
            assert_eq!(v, if (units..2 * units).contains(&i) { 1.0 } else { 0.0 });
        }
        assert!(head.dense.bias.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_weight_moments() {
        // a 100 x 100 dense kernel: fan-in 100, 10^4 draws
        let mut model = Model::zeros(&ModelConfig::new(ModelKind::TdcLstm)).unwrap();
        if let crate::seqmods::Head::Lstm(head) = &mut model.head {
            head.dense = crate::layers::Dense::zeros(100, 100);
        }
        init_parameters(&mut model, 11);
        let crate::seqmods::Head::Lstm(head) = &model.head else { panic!() };
        let (mean, sd) = mean_and_std(&head.dense.weight.data);
        assert!(mean.abs() < 0.005);
        assert!((sd / 0.1 - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn clipping_rescales_by_global_norm() {
        let mut g = Model::zeros(&small_config(ModelKind::TdcLstm)).unwrap();
        {
            let mut ps = g.params_mut();
            ps[0].data[0] = 3.0;
            ps[1].data[0] = 4.0;
        }
        let before = g.clone();
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g.params()[0].1.data[0] - 0.6).abs() < 1e-15);
        assert!((g.params()[1].1.data[0] - 0.8).abs() < 1e-15);
        // below the threshold nothing changes
        let mut h = before.clone();
        clip_global_norm(&mut h, 5.0);
        assert_eq!(h, before);
    }

    #[test]
    fn nesterov_matches_hand_steps() {
        let mut m = Model::zeros(&small_config(ModelKind::TdcLstm)).unwrap();
        let mut g = m.zeros_like();
        g.params_mut()[0].data[0] = 1.0;
        let mut opt = Nesterov::new(&m, 0.1, 0.9);
        opt.step(&mut m, &g);
        // v = -0.1, w = 0.9 * -0.1 - 0.1
        assert!((m.params()[0].1.data[0] + 0.19).abs() < 1e-15);
        opt.step(&mut m, &g);
        // v = -0.19, w += 0.9 * -0.19 - 0.1
        assert!((m.params()[0].1.data[0] + 0.19 + 0.271).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_skips_biases() {
        let mut m = Model::zeros(&small_config(ModelKind::TdcLstm)).unwrap();
        for p in m.params_mut() {
            p.fill(0.5);
        }
        let mut g = m.zeros_like();
        add_l2_gradient(&m, &mut g, 0.01);
        for ((_, p), (_, gp)) in m.params().iter().zip(g.params()) {
            let expected = if p.role == ParamRole::Weight { 0.01 } else { 0.0 };
            assert!(gp.data.iter().all(|&v| v == expected));
        }
        let weights: usize = m.params().iter().filter(|(_, p)| p.role == ParamRole::Weight).map(|(_, p)| p.len()).sum();
        assert!((l2_penalty(&m, 0.01) - 0.01 * 0.25 * weights as f64).abs() < 1e-9);
    }

    #[test]
    fn presets() {
        assert_eq!(sensor_preset("00425010001", ModelKind::TdcLstm), Some((0.001, 0.0025)));
        assert_eq!(sensor_preset("Vottignasco", ModelKind::TdcUnpWaveNet), Some((0.0025, 0.0075)));
        assert_eq!(sensor_preset("savigliano", ModelKind::TdcLstm), Some((0.001, 0.00075)));
        assert_eq!(sensor_preset("00417910001", ModelKind::TdcLstm), Some((0.001, 0.0005)));
        assert_eq!(sensor_preset("racconigi", ModelKind::TdcUnpWaveNet), Some((0.001, 0.0075)));
        assert_eq!(sensor_preset("elsewhere", ModelKind::TdcLstm), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.clipnorm = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::seeds_from(5, 3), vec![5, 6, 7]);
    }

    #[test]
    fn two_member_spread() {
        let (m, s) = mean_and_std(&[4.0, 4.4]);
        assert!((m - 4.2).abs() < 1e-12);
        assert!((s - 0.2).abs() < 1e-12);
        assert_eq!(mean_and_std(&[3.0, 3.0, 3.0]).1, 0.0);
    }
}
