//! Time-distributed CNN encoder.
//!
//! Each weather frame goes through four valid 2x2 convolutions with
//! leaky-ReLU, a global spatial max pool, and is then concatenated with the
//! month one-hot encoding. The result is one 27-wide row per time step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{leaky_relu, Conv2d, Param, Parameterized, SequenceTensor};
use crate::preprocess::{one_hot_month, MONTH_FEATURES};

pub const DEFAULT_FILTERS: [usize; 4] = [8, 16, 16, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdcEncoder {
    pub convs: Vec<Conv2d>,
    pub slope: f64,
}

/// Post-activation feature maps of one frame plus the max-pool winners.
#[derive(Clone, Debug)]
pub struct FrameCache {
    activations: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
    argmax: Vec<usize>,
}

impl TdcEncoder {
    pub fn zeros(in_channels: usize, filters: &[usize], kernel: usize, slope: f64) -> Self {
        let mut convs = Vec::with_capacity(filters.len());
        let mut cin = in_channels;
        for &f in filters {
            convs.push(Conv2d::zeros(kernel, cin, f));
            cin = f;
        }
        Self { convs, slope }
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().map_or(0, Conv2d::in_channels)
    }

    /// Width of the pooled feature vector (before the month encoding).
    pub fn pooled_features(&self) -> usize {
        self.convs.last().map_or(0, Conv2d::out_channels)
    }

    pub fn output_features(&self) -> usize {
        self.pooled_features() + MONTH_FEATURES
    }

    pub fn min_frame_side(&self) -> usize {
        1 + self.convs.iter().map(|c| c.kernel() - 1).sum::<usize>()
    }

    pub fn check_frame(&self, height: usize, width: usize) -> Result<()> {
        let min = self.min_frame_side();
        if height < min || width < min {
            return Err(Error::Shape(format!(
                "frames of {height}x{width} are too small for the encoder, need at least {min}x{min}"
            )));
        }
        Ok(())
    }

    /// Encodes one `(height, width, channels)` frame into a row of
    /// `pooled_features() + 11` values.
    pub fn encode_frame(
        &self,
        frame: &[f64],
        height: usize,
        width: usize,
        month: u32,
    ) -> (Vec<f64>, FrameCache) {
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len());
        let mut dims = Vec::with_capacity(self.convs.len());
        let (mut h, mut w) = (height, width);
        for conv in &self.convs {
            let input = activations.last().map_or(frame, Vec::as_slice);
            let mut a = conv.forward(input, h, w);
            a.iter_mut().for_each(|v| *v = leaky_relu(*v, self.slope));
            (h, w) = conv.output_dims(h, w);
            dims.push((h, w));
            activations.push(a);
        }

        let channels = self.pooled_features();
        let mut row = Vec::with_capacity(self.output_features());
        let mut argmax = Vec::with_capacity(channels);
        if let Some(last) = activations.last() {
            for c in 0..channels {
                let mut best = 0;
                for pos in 1..h * w {
                    if last[pos * channels + c] > last[best * channels + c] {
                        best = pos;
                    }
                }
                argmax.push(best);
                row.push(last[best * channels + c]);
            }
        }
        row.extend_from_slice(&one_hot_month(month));
        (
            row,
            FrameCache {
                activations,
                dims,
                argmax,
            },
        )
    }

    /// Backpropagates the gradient of the pooled features of one frame.
    pub fn backward_frame(
        &self,
        frame: &[f64],
        height: usize,
        width: usize,
        cache: &FrameCache,
        d_pooled: &[f64],
        grad: &mut TdcEncoder,
    ) {
        let n = self.convs.len();
        if n == 0 {
            return;
        }
        let channels = self.pooled_features();
        let mut d_act = vec![0.0; cache.activations[n - 1].len()];
        for (c, (&pos, &d)) in cache.argmax.iter().zip(d_pooled).enumerate() {
            d_act[pos * channels + c] += d;
        }
        for l in (0..n).rev() {
            let act = &cache.activations[l];
            for (d, &a) in d_act.iter_mut().zip(act) {
                if a < 0.0 {
                    *d *= self.slope;
                }
            }
            let (input, (h, w)) = if l == 0 {
                (frame, (height, width))
            } else {
                (cache.activations[l - 1].as_slice(), cache.dims[l - 1])
            };
            let dx = self.convs[l].backward(input, h, w, &d_act, &mut grad.convs[l], l > 0);
            if let Some(dx) = dx {
                d_act = dx;
            }
        }
    }
}

impl Parameterized for TdcEncoder {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        self.convs.iter().flat_map(Parameterized::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(Parameterized::params_mut).collect()
    }
}

/// Encodes a `(T, H, W, P)` video with per-frame months into a `(T, 27)` series.
pub fn tdc_encode(
    encoder: &TdcEncoder,
    video: &[f64],
    months: &[u32],
    height: usize,
    width: usize,
) -> Result<SequenceTensor> {
    encoder.check_frame(height, width)?;
    let frame_len = height * width * encoder.in_channels();
    if frame_len == 0 || video.len() != months.len() * frame_len {
        return Err(Error::Shape(format!(
            "video of {} values does not hold {} frames of {height}x{width}x{}",
            video.len(),
            months.len(),
            encoder.in_channels()
        )));
    }
    let rows: Vec<Vec<f64>> = video
        .chunks_exact(frame_len)
        .zip(months)
        .map(|(frame, &m)| encoder.encode_frame(frame, height, width, m).0)
        .collect();
    SequenceTensor::from_rows(&rows)
}

/// Sum over layers of `k*k*cin*cout + cout`.
pub fn tdc_parameter_count(encoder: &TdcEncoder) -> usize {
    encoder.num_parameters()
}
