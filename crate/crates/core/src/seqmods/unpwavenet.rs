//! Unpadded WaveNet head.
//!
//! Every layer shortens the series by `(K-1) * d`. The gated 1x1 output feeds
//! both the skip branch, which a channel-distributed cell collapses to one
//! step, and the residual stream, which is average-pooled to the same length.
//! The five one-step skips are concatenated, mixed by a single 1x1 layer with
//! leaky-ReLU and mapped to the scalar output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    apply_channel_mask, avg_pool_align, avg_pool_align_backward, channel_distributed, channel_distributed_backward,
    gated_activation, gated_activation_backward, leaky_relu, leaky_relu_grad, receptive_field, Dense, DilatedConv1d,
    Param, Parameterized, SequenceTensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnpLayer {
    pub filter: DilatedConv1d,
    pub gate: DilatedConv1d,
    /// 1x1 mixing of the gated activations, shared by skip and residual.
    pub mix: Dense,
    /// Width change of the residual stream (first layer only).
    pub projection: Option<Dense>,
    /// Channel-distributed cell collapsing the skip series to one step.
    pub skip: Dense,
}

impl UnpLayer {
    pub fn zeros(input_len: usize, in_channels: usize, filters: usize, channels: usize, kernel: usize, dilation: usize) -> Self {
        let out_len = input_len + 1 - ((kernel - 1) * dilation + 1);
        Self {
            filter: DilatedConv1d::zeros(kernel, in_channels, filters, dilation),
            gate: DilatedConv1d::zeros(kernel, in_channels, filters, dilation),
            mix: Dense::zeros(filters, channels),
            projection: (in_channels != channels).then(|| Dense::zeros(in_channels, channels)),
            skip: Dense::zeros(out_len, 1),
        }
    }

    pub fn dilation(&self) -> usize {
        self.filter.dilation
    }

    /// Parameters of the layer without its skip cell.
    pub fn block_parameters(&self) -> usize {
        self.num_parameters() - self.skip.num_parameters()
    }
}

impl Parameterized for UnpLayer {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        let mut v = renamed(["filter.weight", "filter.bias"], &self.filter);
        v.extend(renamed(["gate.weight", "gate.bias"], &self.gate));
        v.extend(renamed(["mix.weight", "mix.bias"], &self.mix));
        if let Some(proj) = &self.projection {
            v.extend(renamed(["projection.weight", "projection.bias"], proj));
        }
        v.extend(renamed(["skip.weight", "skip.bias"], &self.skip));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.filter.params_mut();
        v.extend(self.gate.params_mut());
        v.extend(self.mix.params_mut());
        if let Some(proj) = &mut self.projection {
            v.extend(proj.params_mut());
        }
        v.extend(self.skip.params_mut());
        v
    }
}

fn renamed<'a>(names: [&'static str; 2], block: &'a impl Parameterized) -> Vec<(&'static str, &'a Param)> {
    names.into_iter().zip(block.params().into_iter().map(|(_, p)| p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnpHead {
    pub bottleneck: Dense,
    pub layers: Vec<UnpLayer>,
    pub post: Dense,
    pub output: Dense,
    pub slope: f64,
}

struct LayerCache {
    x: SequenceTensor,
    f: SequenceTensor,
    g: SequenceTensor,
    a: SequenceTensor,
    s: SequenceTensor,
    pooled: Option<SequenceTensor>,
}

pub struct UnpHeadCache {
    h: SequenceTensor,
    mask: Vec<f64>,
    layers: Vec<LayerCache>,
    skips: Vec<f64>,
    post_pre: Vec<f64>,
    post_out: Vec<f64>,
}

impl UnpHead {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        window: usize,
        features: usize,
        bottleneck: usize,
        n_layers: usize,
        kernel: usize,
        filters: usize,
        channels: usize,
        slope: f64,
    ) -> Result<Self> {
        let rf = receptive_field(kernel, n_layers);
        if window < rf {
            return Err(Error::TooShort {
                required: rf,
                actual: window,
            });
        }
        let mut layers = Vec::with_capacity(n_layers);
        let (mut len, mut cin) = (window, bottleneck);
        for l in 0..n_layers {
            let d = 1usize << l;
            let layer = UnpLayer::zeros(len, cin, filters, channels, kernel, d);
            len -= (kernel - 1) * d;
            cin = channels;
            layers.push(layer);
        }
        Ok(Self {
            bottleneck: Dense::zeros(features, bottleneck),
            layers,
            post: Dense::zeros(n_layers * channels, channels),
            output: Dense::zeros(channels, 1),
            slope,
        })
    }

    pub fn receptive_field(&self) -> usize {
        let k = self.layers.first().map_or(1, |l| l.filter.kernel());
        receptive_field(k, self.layers.len())
    }

    /// Length of the series entering the head.
    pub fn window(&self) -> usize {
        self.layers
            .first()
            .map_or(0, |l| l.skip.inputs() + (l.filter.kernel() - 1) * l.dilation())
    }

    /// Residual-stream length after each layer.
    pub fn layer_lengths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.skip.inputs()).collect()
    }

    pub fn forward(&self, h: &SequenceTensor, mask: Option<&[f64]>) -> Result<(f64, UnpHeadCache)> {
        if h.len() != self.window() {
            let rf = self.receptive_field();
            if h.len() < rf {
                return Err(Error::TooShort {
                    required: rf,
                    actual: h.len(),
                });
            }
            return Err(Error::Shape(format!(
                "head was built for series of length {}, got {}",
                self.window(),
                h.len()
            )));
        }
        let b = self.bottleneck.forward(h)?;
        let mask = mask.map_or_else(|| vec![1.0; b.channels()], <[f64]>::to_vec);
        let mut x = apply_channel_mask(&b, &mask);
        let n = self.layers.len();
        let mut caches = Vec::with_capacity(n);
        let mut skips = Vec::with_capacity(self.post.inputs());
        for (l, layer) in self.layers.iter().enumerate() {
            let f = layer.filter.forward(&x)?;
            let g = layer.gate.forward(&x)?;
            let a = gated_activation(&f, &g)?;
            let s = layer.mix.forward(&a)?;
            skips.extend_from_slice(channel_distributed(&s, &layer.skip)?.row(0));
            // the last residual output feeds nothing
            let (next, pooled) = if l + 1 < n {
                let pooled = avg_pool_align(&x, layer.dilation(), layer.filter.kernel())?;
                let mut r = match &layer.projection {
                    Some(p) => p.forward(&pooled)?,
                    None => pooled.clone(),
                };
                r.add_assign(&s);
                (Some(r), Some(pooled))
            } else {
                (None, None)
            };
            caches.push(LayerCache { x, f, g, a, s, pooled });
            match next {
                Some(r) => x = r,
                None => break,
            }
        }
        let post_pre = self.post.forward_rows(&skips);
        let post_out: Vec<f64> = post_pre.iter().map(|&v| leaky_relu(v, self.slope)).collect();
        let y = self.output.forward_rows(&post_out)[0];
        Ok((
            y,
            UnpHeadCache {
                h: h.clone(),
                mask,
                layers: caches,
                skips,
                post_pre,
                post_out,
            },
        ))
    }

    pub fn backward(&self, cache: &UnpHeadCache, dy: f64, grad: &mut UnpHead) -> SequenceTensor {
        let d_post = self.output.backward_rows(&cache.post_out, &[dy], &mut grad.output);
        let d_pre: Vec<f64> = d_post
            .iter()
            .zip(&cache.post_pre)
            .map(|(d, &v)| d * leaky_relu_grad(v, self.slope))
            .collect();
        let d_skips = self.post.backward_rows(&cache.skips, &d_pre, &mut grad.post);
        let channels = self.post.outputs();

        // gradient flowing into the residual output of the current layer
        let mut d_next: Option<SequenceTensor> = None;
        let mut dx = SequenceTensor::zeros(0, 0);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let c = &cache.layers[l];
            let gl = &mut grad.layers[l];
            let d_skip = SequenceTensor::new(1, channels, d_skips[l * channels..(l + 1) * channels].to_vec())
                .expect("skip gradient shape");
            let mut ds = channel_distributed_backward(&c.s, &layer.skip, &d_skip, &mut gl.skip);
            let mut d_x = SequenceTensor::zeros(c.x.len(), c.x.channels());
            if let Some(dr) = &d_next {
                ds.add_assign(dr);
                let pooled = c.pooled.as_ref().expect("residual cache");
                let d_pooled = match (&layer.projection, &mut gl.projection) {
                    (Some(p), Some(gp)) => p.backward(pooled, dr, gp),
                    _ => dr.clone(),
                };
                d_x.add_assign(&avg_pool_align_backward(&d_pooled, c.x.len(), layer.dilation(), layer.filter.kernel()));
            }
            let da = layer.mix.backward(&c.a, &ds, &mut gl.mix);
            let (df, dg) = gated_activation_backward(&c.f, &c.g, &da);
            d_x.add_assign(&layer.filter.backward(&c.x, &df, &mut gl.filter));
            d_x.add_assign(&layer.gate.backward(&c.x, &dg, &mut gl.gate));
            if l == 0 {
                dx = d_x;
            } else {
                d_next = Some(d_x);
            }
        }
        let db = apply_channel_mask(&dx, &cache.mask);
        self.bottleneck.backward(&cache.h, &db, &mut grad.bottleneck)
    }
}

impl Parameterized for UnpHead {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        let mut v = self.bottleneck.params();
        for layer in &self.layers {
            v.extend(layer.params());
        }
        v.extend(self.post.params());
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.bottleneck.params_mut();
        for layer in &mut self.layers {
            v.extend(layer.params_mut());
        }
        v.extend(self.post.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

/// Inference pass of the UnPWaveNet head over a `(T, features)` series.
pub fn unpwavenet_head_forward(h: &SequenceTensor, head: &UnpHead) -> Result<f64> {
    head.forward(h, None).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_head() -> UnpHead {
        UnpHead::zeros(104, 27, 16, 5, 4, 32, 8, 0.3).unwrap()
    }

    #[test]
    fn block_accounting() {
        let head = default_head();
        assert_eq!(head.bottleneck.num_parameters(), 448);
        let blocks: Vec<usize> = head.layers.iter().map(UnpLayer::block_parameters).collect();
        assert_eq!(blocks, vec![4560, 2376, 2376, 2376, 2376]);
        let cd: usize = head.layers.iter().map(|l| l.skip.num_parameters()).sum();
        assert_eq!(cd, 354);
        assert_eq!(head.post.num_parameters(), 328);
        assert_eq!(head.output.num_parameters(), 9);
        assert_eq!(head.num_parameters(), 15203);
        assert_eq!(head.layers[0].projection.as_ref().map(Parameterized::num_parameters), Some(136));
    }

    #[test]
    fn residual_lengths_telescope() {
        let head = default_head();
        assert_eq!(head.layer_lengths(), vec![101, 95, 83, 59, 11]);
        assert_eq!(head.receptive_field(), 94);
        assert_eq!(head.window(), 104);
    }

    #[test]
    fn minimum_window_is_receptive_field() {
        let head = UnpHead::zeros(94, 27, 16, 5, 4, 32, 8, 0.3).unwrap();
        assert_eq!(head.layer_lengths().last(), Some(&1));
        let err = UnpHead::zeros(93, 27, 16, 5, 4, 32, 8, 0.3).unwrap_err();
        assert!(matches!(err, Error::TooShort { required: 94, actual: 93 }));
        let short = SequenceTensor::zeros(90, 27);
        assert!(matches!(
            unpwavenet_head_forward(&short, &default_head()),
            Err(Error::TooShort { required: 94, .. })
        ));
    }

    #[test]
    fn zero_parameters_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = SequenceTensor::new(104, 27, (0..104 * 27).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(unpwavenet_head_forward(&h, &default_head()).unwrap(), 0.0);
    }

    #[test]
    fn every_input_step_reaches_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = default_head();
        for p in head.params_mut() {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let h = SequenceTensor::new(104, 27, (0..104 * 27).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (_, cache) = head.forward(&h, None).unwrap();
        let mut grad = default_head();
        let dh = head.backward(&cache, 1.0, &mut grad);
        for t in 0..104 {
            assert!(dh.row(t).iter().any(|&v| v != 0.0), "step {t} has no gradient path");
        }
    }
}
