//! Full models: the TDC encoder followed by an LSTM or UnPWaveNet head.

mod lstm;
mod unpwavenet;

pub use lstm::{lstm_head_forward, Lstm, LstmHead, LstmHeadCache};
pub use unpwavenet::{unpwavenet_head_forward, UnpHead, UnpHeadCache, UnpLayer};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{dropout_mask, receptive_field, Param, Parameterized, SequenceTensor};
use crate::preprocess::{WindowedDataset, MONTH_FEATURES};
use crate::tdc::{FrameCache, TdcEncoder, DEFAULT_FILTERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "tdc-lstm")]
    TdcLstm,
    #[serde(rename = "tdc-unpwavenet")]
    TdcUnpWaveNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::TdcLstm, ModelKind::TdcUnpWaveNet];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TdcLstm => "tdc-lstm",
            ModelKind::TdcUnpWaveNet => "tdc-unpwavenet",
        }
    }

    /// Trainable scalars of the reference architecture.
    pub fn reference_parameter_count(self) -> usize {
        match self {
            ModelKind::TdcLstm => 9705,
            ModelKind::TdcUnpWaveNet => 17915,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tdc-lstm" => Ok(ModelKind::TdcLstm),
            "tdc-unpwavenet" => Ok(ModelKind::TdcUnpWaveNet),
            other => Err(Error::Invalid(format!(
                "unknown model kind {other:?}, expected tdc-lstm or tdc-unpwavenet"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub window: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub in_channels: usize,
    pub tdc_filters: Vec<usize>,
    pub tdc_kernel: usize,
    pub slope: f64,
    pub bottleneck: usize,
    pub dropout: f64,
    pub lstm_units: usize,
    pub dense_units: usize,
    pub unp_layers: usize,
    pub unp_kernel: usize,
    pub unp_filters: usize,
    pub unp_channels: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            window: 104,
            frame_height: 8,
            frame_width: 8,
            in_channels: 3,
            tdc_filters: DEFAULT_FILTERS.to_vec(),
            tdc_kernel: 2,
            slope: 0.3,
            bottleneck: 16,
            dropout: 0.15,
            lstm_units: 32,
            dense_units: 8,
            unp_layers: 5,
            unp_kernel: 4,
            unp_filters: 32,
            unp_channels: 8,
        }
    }

    /// Width of the encoder's output rows.
    pub fn features(&self) -> usize {
        self.tdc_filters.last().copied().unwrap_or(0) + MONTH_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.tdc_filters.is_empty() || self.tdc_filters.contains(&0) || self.tdc_kernel == 0 || self.in_channels == 0 {
            return bad("encoder needs at least one layer and non-zero filters, kernel and channels".into());
        }
        let min_side = 1 + self.tdc_filters.len() * (self.tdc_kernel - 1);
        if self.frame_height < min_side || self.frame_width < min_side {
            return bad(format!(
                "frames of {}x{} are too small for the encoder, need at least {min_side}x{min_side}",
                self.frame_height, self.frame_width
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !self.slope.is_finite() {
            return bad("activation slope must be finite".into());
        }
        if self.bottleneck == 0 {
            return bad("bottleneck width must be at least 1".into());
        }
        match self.kind {
            ModelKind::TdcLstm => {
                if self.lstm_units == 0 || self.dense_units == 0 {
                    return bad("LSTM units and dense units must be at least 1".into());
                }
            }
            ModelKind::TdcUnpWaveNet => {
                if self.unp_layers == 0 || self.unp_kernel < 2 || self.unp_filters == 0 || self.unp_channels == 0 {
                    return bad("UnPWaveNet needs at least one layer, kernel >= 2 and non-zero widths".into());
                }
                let rf = receptive_field(self.unp_kernel, self.unp_layers);
                if self.window < rf {
                    return bad(format!(
                        "window {} is shorter than the receptive field {rf} of {} layers with kernel {}",
                        self.window, self.unp_layers, self.unp_kernel
                    ));
                }
            }
        }
        Ok(())
    }

    /// Closed-form trainable-scalar count of each block, in model order.
    pub fn expected_breakdown(&self) -> Vec<(String, usize)> {
        let mut blocks = Vec::new();
        let k2 = self.tdc_kernel * self.tdc_kernel;
        let mut cin = self.in_channels;
        let mut tdc = 0;
        for &f in &self.tdc_filters {
            tdc += k2 * cin * f + f;
            cin = f;
        }
        blocks.push(("tdc".to_string(), tdc));
        let b = self.bottleneck;
        blocks.push(("bottleneck".to_string(), self.features() * b + b));
        match self.kind {
            ModelKind::TdcLstm => {
                let (h, d) = (self.lstm_units, self.dense_units);
                blocks.push(("lstm".to_string(), 4 * (h * (b + h) + h)));
                blocks.push(("dense".to_string(), h * d + d));
                blocks.push(("output".to_string(), d + 1));
            }
            ModelKind::TdcUnpWaveNet => {
                let (k, f, c) = (self.unp_kernel, self.unp_filters, self.unp_channels);
                let mut cin = b;
                let mut cd = 0;
                for l in 1..=self.unp_layers {
                    let mut n = 2 * (k * cin * f + f) + f * c + c;
                    if cin != c {
                        n += cin * c + c;
                    }
                    blocks.push((format!("unp_layer{l}"), n));
                    let len = self.window - (k - 1) * ((1 << l) - 1);
                    cd += len + 1;
                    cin = c;
                }
                blocks.push(("cd".to_string(), cd));
                blocks.push(("post".to_string(), self.unp_layers * c * c + c));
                blocks.push(("output".to_string(), c + 1));
            }
        }
        blocks
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(ModelKind::TdcLstm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Lstm(LstmHead),
    Unp(UnpHead),
}

pub enum HeadCache {
    Lstm(LstmHeadCache),
    Unp(UnpHeadCache),
}

impl Head {
    pub fn forward(&self, h: &SequenceTensor, mask: Option<&[f64]>) -> Result<(f64, HeadCache)> {
        match self {
            Head::Lstm(head) => head.forward(h, mask).map(|(y, c)| (y, HeadCache::Lstm(c))),
            Head::Unp(head) => head.forward(h, mask).map(|(y, c)| (y, HeadCache::Unp(c))),
        }
    }

    /// Returns dL/dh; `grad` must be a head of the same kind.
    pub fn backward(&self, cache: &HeadCache, dy: f64, grad: &mut Head) -> SequenceTensor {
        match (self, cache, grad) {
            (Head::Lstm(h), HeadCache::Lstm(c), Head::Lstm(g)) => h.backward(c, dy, g),
            (Head::Unp(h), HeadCache::Unp(c), Head::Unp(g)) => h.backward(c, dy, g),
            _ => panic!("head, cache and gradient kinds differ"),
        }
    }

    fn named_params(&self) -> Vec<(String, &Param)> {
        match self {
            Head::Lstm(h) => {
                let mut v = Vec::new();
                for (block, params) in [
                    ("bottleneck", h.bottleneck.params()),
                    ("lstm", h.lstm.params()),
                    ("dense", h.dense.params()),
                    ("output", h.output.params()),
                ] {
                    v.extend(params.into_iter().map(|(n, p)| (format!("{block}.{n}"), p)));
                }
                v
            }
            Head::Unp(h) => {
                let mut v: Vec<(String, &Param)> =
                    h.bottleneck.params().into_iter().map(|(n, p)| (format!("bottleneck.{n}"), p)).collect();
                for (l, layer) in h.layers.iter().enumerate() {
                    v.extend(layer.params().into_iter().map(|(n, p)| (format!("layer{}.{n}", l + 1), p)));
                }
                v.extend(h.post.params().into_iter().map(|(n, p)| (format!("post.{n}"), p)));
                v.extend(h.output.params().into_iter().map(|(n, p)| (format!("output.{n}"), p)));
                v
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Head::Lstm(h) => h.params_mut(),
            Head::Unp(h) => h.params_mut(),
        }
    }

    pub fn bottleneck_width(&self) -> usize {
        match self {
            Head::Lstm(h) => h.bottleneck.outputs(),
            Head::Unp(h) => h.bottleneck.outputs(),
        }
    }
}

/// A complete model: configuration, encoder and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: TdcEncoder,
    pub head: Head,
}

/// Trainable-scalar total with a per-block breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub blocks: Vec<(String, usize)>,
}

impl ParameterCount {
    pub fn block(&self, name: &str) -> Option<usize> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

impl Model {
    /// All-zero model of the given configuration.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = TdcEncoder::zeros(config.in_channels, &config.tdc_filters, config.tdc_kernel, config.slope);
        let head = match config.kind {
            ModelKind::TdcLstm => Head::Lstm(LstmHead::zeros(
                config.features(),
                config.bottleneck,
                config.lstm_units,
                config.dense_units,
                config.slope,
            )),
            ModelKind::TdcUnpWaveNet => Head::Unp(UnpHead::zeros(
                config.window,
                config.features(),
                config.bottleneck,
                config.unp_layers,
                config.unp_kernel,
                config.unp_filters,
                config.unp_channels,
                config.slope,
            )?),
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            head,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Same shapes, all values zero (a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut m = self.clone();
        m.zero_grad();
        m
    }

    /// Tensor names in a stable order, e.g. `tdc.conv1.weight` or `layer3.skip.bias`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        for (i, conv) in self.encoder.convs.iter().enumerate() {
            v.extend(conv.params().into_iter().map(|(n, p)| (format!("tdc.conv{}.{n}", i + 1), p)));
        }
        v.extend(self.head.named_params());
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(self.params_mut()).collect()
    }

    /// Runs one `(T, H, W, P)` window through encoder and head.
    pub fn forward_window(&self, video: &[f64], months: &[u32]) -> Result<f64> {
        let h = crate::tdc::tdc_encode(&self.encoder, video, months, self.config.frame_height, self.config.frame_width)?;
        self.head.forward(&h, None).map(|(y, _)| y)
    }

    /// Output and its gradient with respect to every parameter for one window
    /// (dropout off).
    pub fn output_gradient(&self, video: &[f64], months: &[u32]) -> Result<(f64, Model)> {
        let (hgt, wid) = (self.config.frame_height, self.config.frame_width);
        self.encoder.check_frame(hgt, wid)?;
        let frame_len = hgt * wid * self.config.in_channels;
        if video.len() != months.len() * frame_len {
            return Err(Error::Shape(format!(
                "video of {} values does not hold {} frames of {frame_len}",
                video.len(),
                months.len()
            )));
        }
        let mut rows = Vec::with_capacity(months.len());
        let mut caches = Vec::with_capacity(months.len());
        for (frame, &m) in video.chunks_exact(frame_len).zip(months) {
            let (row, cache) = self.encoder.encode_frame(frame, hgt, wid, m);
            rows.push(row);
            caches.push(cache);
        }
        let h = SequenceTensor::from_rows(&rows)?;
        let (y, cache) = self.head.forward(&h, None)?;
        let mut grad = self.zeros_like();
        let dh = self.head.backward(&cache, 1.0, &mut grad.head);
        let pooled = self.encoder.pooled_features();
        for (t, (frame, fc)) in video.chunks_exact(frame_len).zip(&caches).enumerate() {
            self.encoder
                .backward_frame(frame, hgt, wid, fc, &dh.row(t)[..pooled], &mut grad.encoder);
        }
        Ok((y, grad))
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        let mut v = self.encoder.params();
        v.extend(match &self.head {
            Head::Lstm(h) => h.params(),
            Head::Unp(h) => h.params(),
        });
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Builds and initializes a model, checking its parameter count against the
/// closed-form accounting and, when `tripwire` is set, against the reference
/// total of its kind.
pub fn build_model(config: &ModelConfig, seed: u64, tripwire: bool) -> Result<Model> {
    let mut model = Model::zeros(config)?;
    crate::training::init_parameters(&mut model, seed);
    let count = count_parameters(&model);
    let expected = config.expected_breakdown();
    if count.blocks != expected {
        return Err(Error::ParameterCount {
            kind: format!("{} block breakdown {:?}", config.kind, count.blocks),
            expected: expected.iter().map(|(_, c)| c).sum(),
            actual: count.total,
        });
    }
    if tripwire && count.total != config.kind.reference_parameter_count() {
        return Err(Error::ParameterCount {
            kind: config.kind.name().to_string(),
            expected: config.kind.reference_parameter_count(),
            actual: count.total,
        });
    }
    Ok(model)
}

fn block_of(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    match (first.strip_prefix("layer"), parts.next()) {
        (Some(_), Some("skip")) => "cd".to_string(),
        (Some(l), _) => format!("unp_layer{l}"),
        (None, _) => first.to_string(),
    }
}

pub fn count_parameters(model: &Model) -> ParameterCount {
    let mut blocks: Vec<(String, usize)> = Vec::new();
    for (name, p) in model.named_params() {
        let block = block_of(&name);
        match blocks.iter_mut().find(|(b, _)| *b == block) {
            Some(entry) => entry.1 += p.len(),
            None => blocks.push((block, p.len())),
        }
    }
    // skip cells are listed between layers but reported as one block after them
    if let Some(pos) = blocks.iter().position(|(b, _)| b == "cd") {
        let cd = blocks.remove(pos);
        let after = blocks.iter().rposition(|(b, _)| b.starts_with("unp_layer")).map_or(blocks.len(), |i| i + 1);
        blocks.insert(after, cd);
    }
    ParameterCount {
        total: blocks.iter().map(|(_, c)| c).sum(),
        blocks,
    }
}

fn check_dataset(model: &Model, data: &WindowedDataset) -> Result<()> {
    let c = &model.config;
    if (data.height, data.width, data.channels) != (c.frame_height, c.frame_width, c.in_channels) {
        return Err(Error::Shape(format!(
            "model expects {}x{}x{} frames, data has {}x{}x{}",
            c.frame_height, c.frame_width, c.in_channels, data.height, data.width, data.channels
        )));
    }
    if data.window != c.window {
        return Err(Error::Shape(format!(
            "model expects windows of {} weeks, data has {}",
            c.window, data.window
        )));
    }
    Ok(())
}

fn window_rows(rows: &[Option<Vec<f64>>], start: usize, len: usize) -> Result<SequenceTensor> {
    let window: Vec<Vec<f64>> = rows[start..start + len]
        .iter()
        .map(|r| r.clone().expect("frame encoded"))
        .collect();
    SequenceTensor::from_rows(&window)
}

/// Mean squared error over the batch and its gradient. Frames shared by
/// several windows are encoded and backpropagated once. When `dropout_rng` is
/// given, each sample draws its own spatial-dropout mask.
pub fn batch_gradient<R: Rng + ?Sized>(
    model: &Model,
    data: &WindowedDataset,
    batch: &[usize],
    mut dropout_rng: Option<&mut R>,
) -> Result<(f64, Model)> {
    check_dataset(model, data)?;
    if batch.is_empty() {
        return Err(Error::EmptySplit("empty batch".into()));
    }
    let t_len = data.window;
    let frames: BTreeSet<usize> = batch
        .iter()
        .flat_map(|&i| {
            let end = data.samples[i].end;
            end - t_len..end
        })
        .collect();
    let (hgt, wid) = (data.height, data.width);
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; data.n_frames()];
    let mut caches: Vec<Option<FrameCache>> = (0..data.n_frames()).map(|_| None).collect();
    for &t in &frames {
        let (row, cache) = model.encoder.encode_frame(data.frame(t), hgt, wid, data.months[t]);
        rows[t] = Some(row);
        caches[t] = Some(cache);
    }

    let pooled = model.encoder.pooled_features();
    let mut d_pooled = vec![0.0; data.n_frames() * pooled];
    let mut grad = model.zeros_like();
    let scale = 2.0 / batch.len() as f64;
    let mut loss = 0.0;
    let width = model.head.bottleneck_width();
    for &i in batch {
        let s = &data.samples[i];
        let h = window_rows(&rows, s.end - t_len, t_len)?;
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) if model.config.dropout > 0.0 => Some(dropout_mask(width, model.config.dropout, rng)),
            _ => None,
        };
        let (y, cache) = model.head.forward(&h, mask.as_deref())?;
        let err = y - s.z;
        loss += err * err;
        let dh = model.head.backward(&cache, scale * err, &mut grad.head);
        for tau in 0..t_len {
            let t = s.end - t_len + tau;
            for (acc, d) in d_pooled[t * pooled..(t + 1) * pooled].iter_mut().zip(&dh.row(tau)[..pooled]) {
                *acc += d;
            }
        }
    }
    for &t in &frames {
        let cache = caches[t].as_ref().expect("frame encoded");
        model
            .encoder
            .backward_frame(data.frame(t), hgt, wid, cache, &d_pooled[t * pooled..(t + 1) * pooled], &mut grad.encoder);
    }
    Ok((loss / batch.len() as f64, grad))
}

/// Normalized predictions for the given samples (dropout off); each frame is
/// encoded once.
pub fn predict(model: &Model, data: &WindowedDataset, samples: &[usize]) -> Result<Vec<f64>> {
    check_dataset(model, data)?;
    let t_len = data.window;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; data.n_frames()];
    let mut out = Vec::with_capacity(samples.len());
    for &i in samples {
        let s = &data.samples[i];
        for t in s.end - t_len..s.end {
            if rows[t].is_none() {
                rows[t] = Some(model.encoder.encode_frame(data.frame(t), data.height, data.width, data.months[t]).0);
            }
        }
        let h = window_rows(&rows, s.end - t_len, t_len)?;
        out.push(model.head.forward(&h, None)?.0);
    }
    Ok(out)
}

/// Mean squared error of the normalized predictions over the given samples.
pub fn mean_squared_error(model: &Model, data: &WindowedDataset, samples: &[usize]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("no samples to evaluate".into()));
    }
    let preds = predict(model, data, samples)?;
    let sum: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, &i)| (p - data.samples[i].z).powi(2))
        .sum();
    Ok(sum / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts_and_breakdowns() {
        let lstm = build_model(&ModelConfig::new(ModelKind::TdcLstm), 1, true).unwrap();
        let c = count_parameters(&lstm);
        assert_eq!(c.total, 9705);
        let blocks: Vec<usize> = c.blocks.iter().map(|b| b.1).collect();
        assert_eq!(blocks, vec![2712, 448, 6272, 264, 9]);

        let unp = build_model(&ModelConfig::new(ModelKind::TdcUnpWaveNet), 1, true).unwrap();
        let c = count_parameters(&unp);
        assert_eq!(c.total, 17915);
        let names: Vec<&str> = c.blocks.iter().map(|b| b.0.as_str()).collect();
        assert_eq!(
            names,
            vec!["tdc", "bottleneck", "unp_layer1", "unp_layer2", "unp_layer3", "unp_layer4", "unp_layer5", "cd", "post", "output"]
        );
        let blocks: Vec<usize> = c.blocks.iter().map(|b| b.1).collect();
        assert_eq!(blocks, vec![2712, 448, 4560, 2376, 2376, 2376, 2376, 354, 328, 9]);
    }

    #[test]
    fn tripwire_guards_reference_totals() {
        let mut cfg = ModelConfig::new(ModelKind::TdcLstm);
        cfg.lstm_units = 64;
        let err = build_model(&cfg, 1, true).unwrap_err();
        assert!(matches!(err, Error::ParameterCount { expected: 9705, .. }), "{err}");
        let m = build_model(&cfg, 1, false).unwrap();
        assert_ne!(count_parameters(&m).total, 9705);
        assert_eq!(count_parameters(&m).block("lstm"), Some(4 * (64 * (16 + 64) + 64)));
    }

    #[test]
    fn named_params_follow_parameter_order() {
        let m = build_model(&ModelConfig::new(ModelKind::TdcUnpWaveNet), 2, true).unwrap();
        let named = m.named_params();
        let plain = m.params();
        assert_eq!(named.len(), plain.len());
        for ((_, a), (_, b)) in named.iter().zip(&plain) {
            assert!(std::ptr::eq(*a, *b));
        }
        let names: BTreeSet<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names.len(), named.len());
        assert!(names.contains("layer1.projection.weight"));
        assert!(names.contains("layer5.skip.bias"));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("wavenet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn short_window_rejected_for_unp() {
        let mut cfg = ModelConfig::new(ModelKind::TdcUnpWaveNet);
        cfg.window = 93;
        assert!(matches!(Model::zeros(&cfg), Err(Error::Config(_))));
    }
}
