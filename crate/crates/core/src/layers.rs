//! Architectural primitives with explicit forward and backward passes.
//!
//! Every differentiable operation comes as a pair: a forward function that
//! only needs its inputs, and a backward function that takes the same inputs
//! plus the upstream gradient and returns the input gradient while
//! accumulating parameter gradients into a gradient-shaped copy of the layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate series stored time-major: `data[t * channels + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTensor {
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SequenceTensor {
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "sequence needs at least one step and one channel, got ({len}, {channels})"
            )));
        }
        if data.len() != len * channels {
            return Err(Error::Shape(format!(
                "expected {} values for ({len}, {channels}), got {}",
                len * channels,
                data.len()
            )));
        }
        Ok(Self {
            len,
            channels,
            data,
        })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        Self {
            len,
            channels,
            data: vec![0.0; len * channels],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), channels, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        self.data[t * self.channels + c] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of one channel across time.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.get(t, c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            len: self.len,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &SequenceTensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn same_shape(&self, other: &SequenceTensor) -> bool {
        self.len == other.len && self.channels == other.channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Weight,
    Bias,
}

/// A trainable tensor. Only `Weight` tensors receive L2 decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub role: ParamRole,
}

impl Param {
    pub fn zeros(shape: &[usize], role: ParamRole) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Objects that own trainable tensors, listed in a stable order.
pub trait Parameterized {
    fn params(&self) -> Vec<(&'static str, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Receptive field after `layer` unpadded dilated convolutions of width
/// `kernel` with dilations 1, 2, 4, ...
pub fn receptive_field(kernel: usize, layer: usize) -> usize {
    let dilation_sum: usize = (0..layer).map(|i| 1usize << i).sum();
    1 + (kernel - 1) * dilation_sum
}

/// Affine map applied row by row (a time-distributed fully connected cell,
/// equivalently a 1x1 convolution). Weight layout is `[inputs, outputs]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(&[inputs, outputs], ParamRole::Weight),
            bias: Param::zeros(&[outputs], ParamRole::Bias),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[1]
    }

    /// `x` holds `rows * inputs` values; returns `rows * outputs`.
    pub fn forward_rows(&self, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let rows = x.len() / n_in;
        let mut y = Vec::with_capacity(rows * n_out);
        for r in 0..rows {
            y.extend_from_slice(&self.bias.data);
            let out = &mut y[r * n_out..];
            for (i, &xv) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let w = &self.weight.data[i * n_out..(i + 1) * n_out];
                for (o, wv) in out.iter_mut().zip(w) {
                    *o += xv * wv;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward_rows(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let rows = x.len() / n_in;
        let mut dx = vec![0.0; x.len()];
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            for (gb, d) in grad.bias.data.iter_mut().zip(dyr) {
                *gb += d;
            }
            for i in 0..n_in {
                let xv = x[r * n_in + i];
                let w = &self.weight.data[i * n_out..(i + 1) * n_out];
                let gw = &mut grad.weight.data[i * n_out..(i + 1) * n_out];
                let mut acc = 0.0;
                for o in 0..n_out {
                    gw[o] += xv * dyr[o];
                    acc += w[o] * dyr[o];
                }
                dx[r * n_in + i] = acc;
            }
        }
        dx
    }

    pub fn forward(&self, x: &SequenceTensor) -> Result<SequenceTensor> {
        if x.channels() != self.inputs() {
            return Err(Error::Shape(format!(
                "affine cell expects {} inputs per row, got {}",
                self.inputs(),
                x.channels()
            )));
        }
        SequenceTensor::new(x.len(), self.outputs(), self.forward_rows(x.data()))
    }

    pub fn backward(
        &self,
        x: &SequenceTensor,
        dy: &SequenceTensor,
        grad: &mut Dense,
    ) -> SequenceTensor {
        SequenceTensor {
            len: x.len(),
            channels: x.channels(),
            data: self.backward_rows(x.data(), dy.data(), grad),
        }
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Dilated 1D convolution without padding. Weight layout is
/// `[kernel, in_channels, out_channels]`; the output is `(K-1)*d` steps shorter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilatedConv1d {
    pub weight: Param,
    pub bias: Param,
    pub dilation: usize,
}

impl DilatedConv1d {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        assert!(kernel >= 1 && dilation >= 1);
        Self {
            weight: Param::zeros(&[kernel, in_channels, out_channels], ParamRole::Weight),
            bias: Param::zeros(&[out_channels], ParamRole::Bias),
            dilation,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[2]
    }

    /// Number of input steps seen by one output step.
    pub fn span(&self) -> usize {
        (self.kernel() - 1) * self.dilation + 1
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        if input_len < self.span() {
            return Err(Error::TooShort {
                required: self.span(),
                actual: input_len,
            });
        }
        Ok(input_len - self.span() + 1)
    }

    pub fn forward(&self, x: &SequenceTensor) -> Result<SequenceTensor> {
        let (k, cin, cout) = (self.kernel(), self.in_channels(), self.out_channels());
        if x.channels() != cin {
            return Err(Error::Shape(format!(
                "convolution expects {cin} input channels, got {}",
                x.channels()
            )));
        }
        let out_len = self.output_len(x.len())?;
        let mut y = Vec::with_capacity(out_len * cout);
        for t in 0..out_len {
            y.extend_from_slice(&self.bias.data);
            let out = &mut y[t * cout..];
            for tap in 0..k {
                let xin = x.row(t + tap * self.dilation);
                for (c, &xv) in xin.iter().enumerate() {
                    let w = &self.weight.data[(tap * cin + c) * cout..(tap * cin + c + 1) * cout];
                    for (o, wv) in out.iter_mut().zip(w) {
                        *o += xv * wv;
                    }
                }
            }
        }
        SequenceTensor::new(out_len, cout, y)
    }

    pub fn backward(
        &self,
        x: &SequenceTensor,
        dy: &SequenceTensor,
        grad: &mut DilatedConv1d,
    ) -> SequenceTensor {
        let (k, cin, cout) = (self.kernel(), self.in_channels(), self.out_channels());
        let mut dx = SequenceTensor::zeros(x.len(), cin);
        for t in 0..dy.len() {
            let dyr = dy.row(t);
            for (gb, d) in grad.bias.data.iter_mut().zip(dyr) {
                *gb += d;
            }
            for tap in 0..k {
                let src = t + tap * self.dilation;
                for c in 0..cin {
                    let xv = x.get(src, c);
                    let off = (tap * cin + c) * cout;
                    let w = &self.weight.data[off..off + cout];
                    let gw = &mut grad.weight.data[off..off + cout];
                    let mut acc = 0.0;
                    for o in 0..cout {
                        gw[o] += xv * dyr[o];
                        acc += w[o] * dyr[o];
                    }
                    dx.data[src * cin + c] += acc;
                }
            }
        }
        dx
    }
}

impl Parameterized for DilatedConv1d {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Elementwise `tanh(filter) * sigmoid(gate)`.
pub fn gated_activation(filter: &SequenceTensor, gate: &SequenceTensor) -> Result<SequenceTensor> {
    if !filter.same_shape(gate) {
        return Err(Error::Shape(format!(
            "gated activation needs equal shapes, got ({}, {}) and ({}, {})",
            filter.len(),
            filter.channels(),
            gate.len(),
            gate.channels()
        )));
    }
    let data = filter
        .data
        .iter()
        .zip(&gate.data)
        .map(|(&f, &g)| f.tanh() * sigmoid(g))
        .collect();
    SequenceTensor::new(filter.len(), filter.channels(), data)
}

/// Returns `(d filter, d gate)`.
pub fn gated_activation_backward(
    filter: &SequenceTensor,
    gate: &SequenceTensor,
    dy: &SequenceTensor,
) -> (SequenceTensor, SequenceTensor) {
    let mut df = SequenceTensor::zeros(filter.len(), filter.channels());
    let mut dg = SequenceTensor::zeros(filter.len(), filter.channels());
    for i in 0..dy.data.len() {
        let tf = filter.data[i].tanh();
        let sg = sigmoid(gate.data[i]);
        df.data[i] = dy.data[i] * sg * (1.0 - tf * tf);
        dg.data[i] = dy.data[i] * tf * sg * (1.0 - sg);
    }
    (df, dg)
}

/// Stride-1 moving average whose window matches the span of a `(kernel, dilation)`
/// unpadded convolution, so the output lines up with that convolution's output.
pub fn avg_pool_align(x: &SequenceTensor, dilation: usize, kernel: usize) -> Result<SequenceTensor> {
    let window = (kernel - 1) * dilation + 1;
    if x.len() < window {
        return Err(Error::TooShort {
            required: window,
            actual: x.len(),
        });
    }
    let out_len = x.len() - window + 1;
    let c = x.channels();
    let mut y = SequenceTensor::zeros(out_len, c);
    // running sum per channel
    let mut acc: Vec<f64> = vec![0.0; c];
    for t in 0..window {
        for (a, v) in acc.iter_mut().zip(x.row(t)) {
            *a += v;
        }
    }
    let inv = 1.0 / window as f64;
    for t in 0..out_len {
        if t > 0 {
            for ch in 0..c {
                acc[ch] += x.get(t + window - 1, ch) - x.get(t - 1, ch);
            }
        }
        for (o, a) in y.row_mut(t).iter_mut().zip(&acc) {
            *o = a * inv;
        }
    }
    Ok(y)
}

pub fn avg_pool_align_backward(
    dy: &SequenceTensor,
    input_len: usize,
    dilation: usize,
    kernel: usize,
) -> SequenceTensor {
    let window = (kernel - 1) * dilation + 1;
    let c = dy.channels();
    let inv = 1.0 / window as f64;
    let mut dx = SequenceTensor::zeros(input_len, c);
    for t in 0..dy.len() {
        for j in 0..window {
            for ch in 0..c {
                dx.data[(t + j) * c + ch] += dy.get(t, ch) * inv;
            }
        }
    }
    dx
}

/// Applies the same affine cell `L -> L*` to every channel's full time series.
pub fn channel_distributed(x: &SequenceTensor, cell: &Dense) -> Result<SequenceTensor> {
    if cell.inputs() != x.len() {
        return Err(Error::Shape(format!(
            "channel-distributed cell expects series of length {}, got {}",
            cell.inputs(),
            x.len()
        )));
    }
    let transposed = transpose(x);
    let out = cell.forward_rows(transposed.data());
    // rows are channels, columns are the new time axis
    let per_channel = SequenceTensor::new(x.channels(), cell.outputs(), out)?;
    Ok(transpose(&per_channel))
}

pub fn channel_distributed_backward(
    x: &SequenceTensor,
    cell: &Dense,
    dy: &SequenceTensor,
    grad: &mut Dense,
) -> SequenceTensor {
    let xt = transpose(x);
    let dyt = transpose(dy);
    let dxt = cell.backward_rows(xt.data(), dyt.data(), grad);
    let dxt = SequenceTensor {
        len: x.channels(),
        channels: x.len(),
        data: dxt,
    };
    transpose(&dxt)
}

pub fn transpose(x: &SequenceTensor) -> SequenceTensor {
    let mut out = SequenceTensor::zeros(x.channels(), x.len());
    for t in 0..x.len() {
        for c in 0..x.channels() {
            out.data[c * x.len() + t] = x.get(t, c);
        }
    }
    out
}

/// Applies the same cell to every frame of a sequence, preserving length and order.
pub fn time_distributed<F>(frames: &[&[f64]], cell: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = frames.iter().position(|f| f.len() != first.len()) {
        return Err(Error::Shape(format!(
            "ragged frames: frame {bad} has {} values, frame 0 has {}",
            frames[bad].len(),
            first.len()
        )));
    }
    Ok(frames.iter().map(|f| cell(f)).collect())
}

/// Per-channel keep mask for spatial dropout: 0 for dropped channels,
/// `1/(1-p)` for survivors.
pub fn dropout_mask<R: Rng + ?Sized>(channels: usize, p: f64, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    let keep = 1.0 / (1.0 - p);
    (0..channels)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Zeroes whole channels with probability `p` while training; identity otherwise.
/// Returns the output and the mask that was applied (all ones at inference).
pub fn spatial_dropout<R: Rng + ?Sized>(
    x: &SequenceTensor,
    p: f64,
    rng: &mut R,
    training: bool,
) -> (SequenceTensor, Vec<f64>) {
    if !training || p == 0.0 {
        return (x.clone(), vec![1.0; x.channels()]);
    }
    let mask = dropout_mask(x.channels(), p, rng);
    (apply_channel_mask(x, &mask), mask)
}

pub fn apply_channel_mask(x: &SequenceTensor, mask: &[f64]) -> SequenceTensor {
    let mut y = x.clone();
    for t in 0..y.len() {
        for (v, m) in y.row_mut(t).iter_mut().zip(mask) {
            *v *= m;
        }
    }
    y
}

/// Valid (unpadded) stride-1 2D convolution over `(height, width, channels)`
/// frames. Weight layout is `[kh, kw, in_channels, out_channels]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            weight: Param::zeros(&[kernel, kernel, in_channels, out_channels], ParamRole::Weight),
            bias: Param::zeros(&[out_channels], ParamRole::Bias),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[3]
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let k = self.kernel();
        (height + 1 - k, width + 1 - k)
    }

    pub fn forward(&self, x: &[f64], height: usize, width: usize) -> Vec<f64> {
        let (k, cin, cout) = (self.kernel(), self.in_channels(), self.out_channels());
        let (oh, ow) = self.output_dims(height, width);
        let mut y = Vec::with_capacity(oh * ow * cout);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = y.len();
                y.extend_from_slice(&self.bias.data);
                let out = &mut y[base..base + cout];
                for ky in 0..k {
                    for kx in 0..k {
                        let xin = &x[((oy + ky) * width + ox + kx) * cin..][..cin];
                        let woff = (ky * k + kx) * cin * cout;
                        for (c, &xv) in xin.iter().enumerate() {
                            let w = &self.weight.data[woff + c * cout..woff + (c + 1) * cout];
                            for (o, wv) in out.iter_mut().zip(w) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns dL/dx only when `need_input_grad`.
    pub fn backward(
        &self,
        x: &[f64],
        height: usize,
        width: usize,
        dy: &[f64],
        grad: &mut Conv2d,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (k, cin, cout) = (self.kernel(), self.in_channels(), self.out_channels());
        let (oh, ow) = self.output_dims(height, width);
        let mut dx = need_input_grad.then(|| vec![0.0; x.len()]);
        for oy in 0..oh {
            for ox in 0..ow {
                let dyr = &dy[(oy * ow + ox) * cout..][..cout];
                for (gb, d) in grad.bias.data.iter_mut().zip(dyr) {
                    *gb += d;
                }
                for ky in 0..k {
                    for kx in 0..k {
                        let xoff = ((oy + ky) * width + ox + kx) * cin;
                        let woff = (ky * k + kx) * cin * cout;
                        for c in 0..cin {
                            let xv = x[xoff + c];
                            let gw = &mut grad.weight.data[woff + c * cout..woff + (c + 1) * cout];
                            for (g, d) in gw.iter_mut().zip(dyr) {
                                *g += xv * d;
                            }
                            if let Some(dx) = dx.as_mut() {
                                let w = &self.weight.data[woff + c * cout..woff + (c + 1) * cout];
                                let acc: f64 = w.iter().zip(dyr).map(|(a, b)| a * b).sum();
                                dx[xoff + c] += acc;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
