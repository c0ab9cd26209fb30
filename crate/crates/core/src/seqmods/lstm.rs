//! LSTM head: bottleneck, spatial dropout, one recurrent layer read out at
//! its final state, then a leaky-ReLU dense layer and a scalar output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{apply_channel_mask, leaky_relu, leaky_relu_grad, sigmoid, Dense, Param, ParamRole, Parameterized, SequenceTensor};

/// Recurrent cell with gates stacked as `[input, forget, candidate, output]`.
/// Gates use the sigmoid; candidate and cell output use leaky-ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    /// `[inputs, 4 * units]`
    pub kernel: Param,
    /// `[units, 4 * units]`
    pub recurrent: Param,
    /// `[4 * units]`
    pub bias: Param,
    pub slope: f64,
}

pub struct LstmCache {
    x: SequenceTensor,
    /// Pre-activations per step, `4 * units` wide.
    z: Vec<Vec<f64>>,
    /// Cell state after each step.
    c: Vec<Vec<f64>>,
    /// Hidden state after each step.
    h: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn zeros(inputs: usize, units: usize, slope: f64) -> Self {
        Self {
            kernel: Param::zeros(&[inputs, 4 * units], ParamRole::Weight),
            recurrent: Param::zeros(&[units, 4 * units], ParamRole::Weight),
            bias: Param::zeros(&[4 * units], ParamRole::Bias),
            slope,
        }
    }

    pub fn inputs(&self) -> usize {
        self.kernel.shape[0]
    }

    pub fn units(&self) -> usize {
        self.recurrent.shape[0]
    }

    /// Runs the whole sequence and returns the final hidden state.
    pub fn forward(&self, x: &SequenceTensor) -> Result<(Vec<f64>, LstmCache)> {
        if x.channels() != self.inputs() {
            return Err(Error::Shape(format!(
                "LSTM expects {} input channels, got {}",
                self.inputs(),
                x.channels()
            )));
        }
        let n = self.units();
        let g4 = 4 * n;
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut cache = LstmCache {
            x: x.clone(),
            z: Vec::with_capacity(x.len()),
            c: Vec::with_capacity(x.len()),
            h: Vec::with_capacity(x.len()),
        };
        for t in 0..x.len() {
            let mut z = self.bias.data.clone();
            for (i, &xv) in x.row(t).iter().enumerate() {
                if xv != 0.0 {
                    let w = &self.kernel.data[i * g4..(i + 1) * g4];
                    z.iter_mut().zip(w).for_each(|(a, b)| *a += xv * b);
                }
            }
            for (j, &hv) in h.iter().enumerate() {
                if hv != 0.0 {
                    let u = &self.recurrent.data[j * g4..(j + 1) * g4];
                    z.iter_mut().zip(u).for_each(|(a, b)| *a += hv * b);
                }
            }
            for k in 0..n {
                let ig = sigmoid(z[k]);
                let fg = sigmoid(z[n + k]);
                let cand = leaky_relu(z[2 * n + k], self.slope);
                let og = sigmoid(z[3 * n + k]);
                c[k] = fg * c[k] + ig * cand;
                h[k] = og * leaky_relu(c[k], self.slope);
            }
            cache.z.push(z);
            cache.c.push(c.clone());
            cache.h.push(h.clone());
        }
        Ok((h, cache))
    }

    /// Backpropagates the gradient of the final hidden state through time.
    pub fn backward(&self, cache: &LstmCache, d_final: &[f64], grad: &mut Lstm) -> SequenceTensor {
        let n = self.units();
        let (n_in, g4) = (self.inputs(), 4 * n);
        let steps = cache.x.len();
        let mut dx = SequenceTensor::zeros(steps, n_in);
        let mut dh = d_final.to_vec();
        let mut dc_next = vec![0.0; n];
        let zeros = vec![0.0; n];
        let mut dz = vec![0.0; g4];
        for t in (0..steps).rev() {
            let z = &cache.z[t];
            let c = &cache.c[t];
            let c_prev = if t > 0 { &cache.c[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &cache.h[t - 1] } else { &zeros };
            for k in 0..n {
                let ig = sigmoid(z[k]);
                let fg = sigmoid(z[n + k]);
                let cand = leaky_relu(z[2 * n + k], self.slope);
                let og = sigmoid(z[3 * n + k]);
                let dc = dc_next[k] + dh[k] * og * leaky_relu_grad(c[k], self.slope);
                dz[k] = dc * cand * ig * (1.0 - ig);
                dz[n + k] = dc * c_prev[k] * fg * (1.0 - fg);
                dz[2 * n + k] = dc * ig * leaky_relu_grad(z[2 * n + k], self.slope);
                dz[3 * n + k] = dh[k] * leaky_relu(c[k], self.slope) * og * (1.0 - og);
                dc_next[k] = dc * fg;
            }
            for (gb, d) in grad.bias.data.iter_mut().zip(&dz) {
                *gb += d;
            }
            let xr = cache.x.row(t);
            let dxr = dx.row_mut(t);
            for i in 0..n_in {
                let w = &self.kernel.data[i * g4..(i + 1) * g4];
                let gw = &mut grad.kernel.data[i * g4..(i + 1) * g4];
                let mut acc = 0.0;
                for q in 0..g4 {
                    gw[q] += xr[i] * dz[q];
                    acc += w[q] * dz[q];
                }
                dxr[i] = acc;
            }
            for j in 0..n {
                let u = &self.recurrent.data[j * g4..(j + 1) * g4];
                let gu = &mut grad.recurrent.data[j * g4..(j + 1) * g4];
                let mut acc = 0.0;
                for q in 0..g4 {
                    gu[q] += h_prev[j] * dz[q];
                    acc += u[q] * dz[q];
                }
                dh[j] = acc;
            }
        }
        dx
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("kernel", &self.kernel), ("recurrent", &self.recurrent), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.recurrent, &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmHead {
    pub bottleneck: Dense,
    pub lstm: Lstm,
    pub dense: Dense,
    pub output: Dense,
    pub slope: f64,
}

pub struct LstmHeadCache {
    h: SequenceTensor,
    mask: Vec<f64>,
    lstm: LstmCache,
    last: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_out: Vec<f64>,
}

impl LstmHead {
    pub fn zeros(features: usize, bottleneck: usize, units: usize, dense: usize, slope: f64) -> Self {
        Self {
            bottleneck: Dense::zeros(features, bottleneck),
            lstm: Lstm::zeros(bottleneck, units, slope),
            dense: Dense::zeros(units, dense),
            output: Dense::zeros(dense, 1),
            slope,
        }
    }

    /// `mask` is the spatial-dropout mask of the bottleneck channels (`None` at inference).
    pub fn forward(&self, h: &SequenceTensor, mask: Option<&[f64]>) -> Result<(f64, LstmHeadCache)> {
        let b = self.bottleneck.forward(h)?;
        let mask = mask.map_or_else(|| vec![1.0; b.channels()], <[f64]>::to_vec);
        let x = apply_channel_mask(&b, &mask);
        let (last, lstm) = self.lstm.forward(&x)?;
        let dense_pre = self.dense.forward_rows(&last);
        let dense_out: Vec<f64> = dense_pre.iter().map(|&v| leaky_relu(v, self.slope)).collect();
        let y = self.output.forward_rows(&dense_out)[0];
        Ok((
            y,
            LstmHeadCache {
                h: h.clone(),
                mask,
                lstm,
                last,
                dense_pre,
                dense_out,
            },
        ))
    }

    /// Returns dL/dh for an output gradient `dy`.
    pub fn backward(&self, cache: &LstmHeadCache, dy: f64, grad: &mut LstmHead) -> SequenceTensor {
        let d_dense = self.output.backward_rows(&cache.dense_out, &[dy], &mut grad.output);
        let d_pre: Vec<f64> = d_dense
            .iter()
            .zip(&cache.dense_pre)
            .map(|(d, &v)| d * leaky_relu_grad(v, self.slope))
            .collect();
        let d_last = self.dense.backward_rows(&cache.last, &d_pre, &mut grad.dense);
        let dx = self.lstm.backward(&cache.lstm, &d_last, &mut grad.lstm);
        let db = apply_channel_mask(&dx, &cache.mask);
        self.bottleneck.backward(&cache.h, &db, &mut grad.bottleneck)
    }
}

impl Parameterized for LstmHead {
    fn params(&self) -> Vec<(&'static str, &Param)> {
        let mut v = self.bottleneck.params();
        v.extend(self.lstm.params());
        v.extend(self.dense.params());
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.bottleneck.params_mut();
        v.extend(self.lstm.params_mut());
        v.extend(self.dense.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

/// Inference pass of the LSTM head over a `(T, features)` series.
pub fn lstm_head_forward(h: &SequenceTensor, head: &LstmHead) -> Result<f64> {
    head.forward(h, None).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_head(seed: u64) -> LstmHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = LstmHead::zeros(27, 16, 32, 8, 0.3);
        for p in head.params_mut() {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        head
    }

    fn random_seq(len: usize, seed: u64) -> SequenceTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SequenceTensor::new(len, 27, (0..len * 27).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let head = LstmHead::zeros(27, 16, 32, 8, 0.3);
        assert_eq!(head.lstm.num_parameters(), 6272);
        assert_eq!(head.num_parameters(), 448 + 6272 + 264 + 9);
        assert_eq!(Lstm::zeros(16, 64, 0.3).num_parameters(), 4 * (64 * (16 + 64) + 64));
    }

    #[test]
    fn zero_parameters_give_zero() {
        let head = LstmHead::zeros(27, 16, 32, 8, 0.3);
        assert_eq!(lstm_head_forward(&random_seq(104, 1), &head).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_inference() {
        let head = random_head(3);
        let x = random_seq(104, 4);
        let a = lstm_head_forward(&x, &head).unwrap();
        let b = lstm_head_forward(&x.clone(), &head).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a != 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let head = random_head(3);
        let x = SequenceTensor::zeros(10, 26);
        assert!(lstm_head_forward(&x, &head).is_err());
    }

    #[test]
    fn single_step_matches_hand_recursion() {
        // one input, one unit: z = x*w + b for each gate
        let mut cell = Lstm::zeros(1, 1, 0.3);
        cell.kernel.data = vec![0.5, -1.0, 2.0, 0.25];
        cell.bias.data = vec![0.1, 1.0, -0.2, 0.0];
        let x = SequenceTensor::new(1, 1, vec![-1.0]).unwrap();
        let (h, _) = cell.forward(&x).unwrap();
        let ig = sigmoid(-0.5 + 0.1);
        let cand = leaky_relu(-2.0 - 0.2, 0.3);
        let og = sigmoid(-0.25);
        let c = ig * cand;
        assert!((h[0] - og * leaky_relu(c, 0.3)).abs() < 1e-15);
    }
}
