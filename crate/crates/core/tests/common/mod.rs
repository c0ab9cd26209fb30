//! Shared helpers: finite-difference checks and small synthetic datasets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wtdnet::dataio::{synthetic_geometry, synthetic_start_date};
use wtdnet::layers::{
    avg_pool_align, avg_pool_align_backward, channel_distributed, channel_distributed_backward, gated_activation,
    gated_activation_backward, Dense, DilatedConv1d, Param, Parameterized, SequenceTensor,
};
use wtdnet::preprocess::{prepare_dataset, synthetic_split_dates, PrepConfig, WindowedDataset};
use wtdnet::{Model, ModelConfig, ModelKind};

pub const STEP: f64 = 1e-5;

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_seq(len: usize, channels: usize, rng: &mut ChaCha8Rng) -> SequenceTensor {
    SequenceTensor::new(len, channels, (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn randomize(block: &mut impl Parameterized, rng: &mut ChaCha8Rng, scale: f64) {
    for p in block.params_mut() {
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

fn dot(a: &SequenceTensor, b: &SequenceTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` in every coordinate of `values`, compared with `analytic`.
fn fd_vector(values: &mut [f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + STEP;
        let up = f(values);
        values[i] = orig - STEP;
        let down = f(values);
        values[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

/// Worst relative error over the inputs and parameters of a dilated convolution.
pub fn dilated_conv_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for (len, cin, cout, k, d) in [(20, 3, 4, 4, 1), (30, 2, 3, 4, 4), (12, 4, 2, 2, 3), (9, 1, 1, 4, 2)] {
        let mut conv = DilatedConv1d::zeros(k, cin, cout, d);
        randomize(&mut conv, &mut r, 0.5);
        let x = random_seq(len, cin, &mut r);
        let proj = random_seq(conv.output_len(len).unwrap(), cout, &mut r);
        let mut grad = DilatedConv1d::zeros(k, cin, cout, d);
        let dx = conv.backward(&x, &proj, &mut grad);

        let mut xv = x.data().to_vec();
        worst = worst.max(fd_vector(&mut xv, dx.data(), &mut |v| {
            let xs = SequenceTensor::new(len, cin, v.to_vec()).unwrap();
            dot(&conv.forward(&xs).unwrap(), &proj)
        }));
        for (pi, g) in grad.params().into_iter().enumerate() {
            let mut pv = conv.params()[pi].1.data.clone();
            worst = worst.max(fd_vector(&mut pv, &g.1.data, &mut |v| {
                let mut c = conv.clone();
                c.params_mut()[pi].data.copy_from_slice(v);
                dot(&c.forward(&x).unwrap(), &proj)
            }));
        }
    }
    worst
}

pub fn channel_distributed_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for (len, ch, out) in [(13, 8, 1), (7, 3, 4), (5, 1, 5)] {
        let mut cell = Dense::zeros(len, out);
        randomize(&mut cell, &mut r, 0.5);
        let x = random_seq(len, ch, &mut r);
        let proj = random_seq(out, ch, &mut r);
        let mut grad = Dense::zeros(len, out);
        let dx = channel_distributed_backward(&x, &cell, &proj, &mut grad);
        let mut xv = x.data().to_vec();
        worst = worst.max(fd_vector(&mut xv, dx.data(), &mut |v| {
            let xs = SequenceTensor::new(len, ch, v.to_vec()).unwrap();
            dot(&channel_distributed(&xs, &cell).unwrap(), &proj)
        }));
        for pi in 0..2 {
            let mut pv = cell.params()[pi].1.data.clone();
            let analytic = grad.params()[pi].1.data.clone();
            worst = worst.max(fd_vector(&mut pv, &analytic, &mut |v| {
                let mut c = cell.clone();
                c.params_mut()[pi].data.copy_from_slice(v);
                dot(&channel_distributed(&x, &c).unwrap(), &proj)
            }));
        }
    }
    worst
}

pub fn gated_activation_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (len, ch) = (11, 5);
    let f = random_seq(len, ch, &mut r).map(|v| 2.0 * v);
    let g = random_seq(len, ch, &mut r).map(|v| 2.0 * v);
    let proj = random_seq(len, ch, &mut r);
    let (df, dg) = gated_activation_backward(&f, &g, &proj);
    let mut fv = f.data().to_vec();
    let a = fd_vector(&mut fv, df.data(), &mut |v| {
        let fs = SequenceTensor::new(len, ch, v.to_vec()).unwrap();
        dot(&gated_activation(&fs, &g).unwrap(), &proj)
    });
    let mut gv = g.data().to_vec();
    let b = fd_vector(&mut gv, dg.data(), &mut |v| {
        let gs = SequenceTensor::new(len, ch, v.to_vec()).unwrap();
        dot(&gated_activation(&f, &gs).unwrap(), &proj)
    });
    a.max(b)
}

pub fn avg_pool_align_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for (len, ch, d, k) in [(20, 3, 1, 4), (30, 2, 4, 4), (10, 1, 2, 2)] {
        let x = random_seq(len, ch, &mut r);
        let out_len = len - (k - 1) * d;
        let proj = random_seq(out_len, ch, &mut r);
        let dx = avg_pool_align_backward(&proj, len, d, k);
        let mut xv = x.data().to_vec();
        worst = worst.max(fd_vector(&mut xv, dx.data(), &mut |v| {
            let xs = SequenceTensor::new(len, ch, v.to_vec()).unwrap();
            dot(&avg_pool_align(&xs, d, k).unwrap(), &proj)
        }));
    }
    worst
}

/// Reduced model used for end-to-end checks: T = 16, 5x5 frames, 2 UnP layers.
pub fn reduced_config(kind: ModelKind) -> ModelConfig {
    let mut c = ModelConfig::new(kind);
    c.window = 16;
    c.frame_height = 5;
    c.frame_width = 5;
    c.unp_layers = 2;
    c
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of the model output over every parameter.
pub fn full_model_error(kind: ModelKind, seed: u64) -> f64 {
    let cfg = reduced_config(kind);
    let mut model = wtdnet::build_model(&cfg, seed, false).unwrap();
    let mut r = rng(seed + 100);
    // biases away from zero so no unit sits at an activation kink
    for p in model.params_mut() {
        if p.role == wtdnet::layers::ParamRole::Bias {
            p.data.iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2));
        }
    }
    let frame_len = 5 * 5 * 3;
    let video: Vec<f64> = (0..16 * frame_len).map(|_| r.random_range(-1.0..1.0)).collect();
    let months: Vec<u32> = (0..16).map(|i| (i % 12) as u32 + 1).collect();
    let (_, grad) = model.output_gradient(&video, &months).unwrap();
    let analytic: Vec<Vec<f64>> = grad.params().iter().map(|(_, p)| p.data.clone()).collect();
    let mut worst: f64 = 0.0;
    let n_params = analytic.len();
    for pi in 0..n_params {
        for j in 0..analytic[pi].len() {
            let orig = model.params()[pi].1.data[j];
            set(&mut model, pi, j, orig + STEP);
            let up = model.forward_window(&video, &months).unwrap();
            set(&mut model, pi, j, orig - STEP);
            let down = model.forward_window(&video, &months).unwrap();
            set(&mut model, pi, j, orig);
            worst = worst.max(rel_err(analytic[pi][j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn set(model: &mut Model, pi: usize, j: usize, v: f64) {
    let p: &mut Param = model.params_mut().swap_remove(pi);
    p.data[j] = v;
}

/// Synthetic case with its default three-way split, windows of `window` weeks.
pub fn synthetic_dataset(seed: u64, side: usize, weeks: usize, window: usize) -> WindowedDataset {
    let geometry = synthetic_geometry(side);
    let opts = wtdnet::dataio::SyntheticOptions {
        window,
        ..Default::default()
    };
    let (weather, target) = wtdnet::dataio::generate_synthetic_case_with(seed, &geometry, weeks, &opts).unwrap();
    let (train_end, test_start) = synthetic_split_dates(synthetic_start_date(), weeks, window).unwrap();
    let cfg = PrepConfig {
        window,
        bbox: None,
        square_side: Some(side),
        train_end,
        test_start,
    };
    prepare_dataset(&weather, &target, &cfg).unwrap()
}

/// Weekly toy target starting on a Monday, value `1 + k` at week `k`.
pub fn toy_target(weeks: usize, missing: &[usize]) -> wtdnet::dataio::TargetSeries {
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    wtdnet::dataio::TargetSeries::new(
        "toy",
        (0..weeks).map(|k| start + chrono::Duration::weeks(k as i64)).collect(),
        (0..weeks).map(|k| (!missing.contains(&k)).then_some(1.0 + k as f64)).collect(),
    )
    .unwrap()
}

pub fn toy_week(k: usize) -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2020, 1, 6).unwrap() + chrono::Duration::weeks(k as i64)
}

/// Brute force over every pair of kept dates in different sets: a pair
/// conflicts when the week ranges `i - T ..= i` of the two samples intersect.
pub fn overlap_conflicts(split: &wtdnet::preprocess::SplitIndex) -> Vec<(usize, usize)> {
    use wtdnet::preprocess::SplitSet;
    let t = split.window as i64;
    let kept: Vec<(usize, SplitSet)> = [SplitSet::Train, SplitSet::Val, SplitSet::Test]
        .into_iter()
        .flat_map(|s| split.positions(s).into_iter().map(move |p| (p, s)))
        .collect();
    let mut conflicts = Vec::new();
    for &(a, sa) in &kept {
        for &(b, sb) in &kept {
            if sa == sb || a >= b {
                continue;
            }
            let (ia, ib) = (split.week_index[a], split.week_index[b]);
            if ia - t <= ib && ib - t <= ia {
                conflicts.push((a, b));
            }
        }
    }
    conflicts
}
