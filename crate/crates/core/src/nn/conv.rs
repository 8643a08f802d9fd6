//! Channels-last 2-D convolution over (time, frequency) feature maps.
//!
//! Feature maps are `[batch, time, freq, channels]`. Convolutions use
//! stride 1 and zero "same" padding on both axes (odd kernels only), so
//! neither axis changes length; only the frequency max-pool shrinks a map.

use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::{join, standard, Param, Parameterized};

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[out_channels, kt * kf * in_channels]`, inner order (dt, df, c).
    pub weight: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
}

pub struct ConvCache {
    cols: Array2<f64>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize), rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel.0 % 2 == 1 && kernel.1 % 2 == 1, "same padding needs odd kernels");
        let fan_in = in_channels * kernel.0 * kernel.1;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            weight: Param::uniform(out_channels, fan_in, bound, rng),
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (b, t, f, c) = x.dim();
        let (kt, kf) = self.kernel;
        let (pt, pf) = (kt / 2, kf / 2);
        let k = kt * kf * c;
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((b * t * f, k));
        let dst = cols.as_slice_mut().expect("fresh array");
        for bi in 0..b {
            for ti in 0..t {
                for fi in 0..f {
                    let row = ((bi * t + ti) * f + fi) * k;
                    for dt in 0..kt {
                        let ts = ti + dt;
                        if ts < pt || ts - pt >= t {
                            continue;
                        }
                        let ts = ts - pt;
                        for df in 0..kf {
                            let fs = fi + df;
                            if fs < pf || fs - pf >= f {
                                continue;
                            }
                            let fs = fs - pf;
                            let s = ((bi * t + ts) * f + fs) * c;
                            let d = row + (dt * kf + df) * c;
                            dst[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, shape: [usize; 4]) -> Array4<f64> {
        let [b, t, f, c] = shape;
        let (kt, kf) = self.kernel;
        let (pt, pf) = (kt / 2, kf / 2);
        let k = kt * kf * c;
        let cols = cols.as_standard_layout();
        let src = cols.as_slice().expect("standard layout");
        let mut out = Array4::<f64>::zeros((b, t, f, c));
        let dst = out.as_slice_mut().expect("fresh array");
        for bi in 0..b {
            for ti in 0..t {
                for fi in 0..f {
                    let row = ((bi * t + ti) * f + fi) * k;
                    for dt in 0..kt {
                        let ts = ti + dt;
                        if ts < pt || ts - pt >= t {
                            continue;
                        }
                        let ts = ts - pt;
                        for df in 0..kf {
                            let fs = fi + df;
                            if fs < pf || fs - pf >= f {
                                continue;
                            }
                            let fs = fs - pf;
                            let d = ((bi * t + ts) * f + fs) * c;
                            let s = row + (dt * kf + df) * c;
                            for ci in 0..c {
                                dst[d + ci] += src[s + ci];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let (b, t, f, c) = x.dim();
        assert_eq!(c, self.in_channels, "input channel count");
        let cols = self.im2col(x);
        let y = standard(cols.dot(&self.weight.value.t()));
        let y = y
            .into_shape_with_order((b, t, f, self.out_channels))
            .expect("row count matches b*t*f");
        (
            y,
            ConvCache {
                cols,
                in_shape: [b, t, f, c],
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvCache, grad: &Array4<f64>) -> Array4<f64> {
        let rows = grad.len() / self.out_channels;
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, self.out_channels))
            .expect("grad matches output shape");
        ndarray::linalg::general_mat_mul(1.0, &g.t(), &cache.cols, 1.0, &mut self.weight.grad);
        let dcols = standard(g.dot(&self.weight.value));
        self.col2im(&dcols, cache.in_shape)
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

/// Batch normalization over the channel (last) axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Batch mean and unbiased variance, applied to the running statistics
    /// by [`BatchNorm::update_running`].
    pub batch_mean: Array1<f64>,
    pub batch_var_unbiased: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::ones((1, channels))),
            beta: Param::new(Array2::zeros((1, channels))),
            running_mean: Param::buffer(Array2::zeros((1, channels))),
            running_var: Param::buffer(Array2::ones((1, channels))),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn rows(x: &Array4<f64>) -> Array2<f64> {
        let c = x.dim().3;
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((x.len() / c, c))
            .expect("contiguous")
    }

    /// Normalizes with batch statistics (training) and returns the cache.
    pub fn forward_train(&self, x: &Array4<f64>) -> (Array4<f64>, BatchNormCache) {
        let shape = x.raw_dim();
        let x2 = Self::rows(x);
        let n = x2.nrows() as f64;
        let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x2 - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma.value + &self.beta.value;
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
        (
            y.into_shape_with_order(shape).expect("same size"),
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: unbiased,
            },
        )
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let shape = x.raw_dim();
        let x2 = Self::rows(x);
        let inv_std = self.running_var.value.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let y = (&x2 - &self.running_mean.value) * &inv_std * &self.gamma.value + &self.beta.value;
        y.into_shape_with_order(shape).expect("same size")
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let m = self.momentum;
        let mean = cache.batch_mean.view().insert_axis(Axis(0));
        let var = cache.batch_var_unbiased.view().insert_axis(Axis(0));
        self.running_mean.value = &self.running_mean.value * (1.0 - m) + &mean * m;
        self.running_var.value = &self.running_var.value * (1.0 - m) + &var * m;
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grad: &Array4<f64>) -> Array4<f64> {
        let shape = grad.raw_dim();
        let dy = Self::rows(grad);
        let n = dy.nrows() as f64;
        self.gamma.grad += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * &self.gamma.value;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / n);
        dx.into_shape_with_order(shape).expect("same size")
    }
}

impl Parameterized for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

pub struct MaxPoolCache {
    /// Flat index into the input for every output element.
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

/// Max-pool along the frequency axis only; time is untouched. Ties resolve to
/// the lowest frequency index.
pub fn max_pool_freq(x: &Array4<f64>, k: usize) -> (Array4<f64>, MaxPoolCache) {
    let (b, t, f, c) = x.dim();
    assert!(k > 0 && f % k == 0, "frequency axis {f} not divisible by pool {k}");
    let fo = f / k;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((b, t, fo, c));
    let mut argmax = vec![0usize; out.len()];
    let dst = out.as_slice_mut().expect("fresh array");
    for bt in 0..b * t {
        for fi in 0..fo {
            for ci in 0..c {
                let o = (bt * fo + fi) * c + ci;
                let mut best = (bt * f + fi * k) * c + ci;
                for j in 1..k {
                    let idx = (bt * f + fi * k + j) * c + ci;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    (
        out,
        MaxPoolCache {
            argmax,
            in_shape: [b, t, f, c],
        },
    )
}

pub fn max_pool_freq_backward(cache: &MaxPoolCache, grad: &Array4<f64>) -> Array4<f64> {
    let [b, t, f, c] = cache.in_shape;
    let mut dx = Array4::<f64>::zeros((b, t, f, c));
    let dst = dx.as_slice_mut().expect("fresh array");
    for (g, &idx) in grad.iter().zip(&cache.argmax) {
        dst[idx] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pooling_keeps_time_and_picks_maximum() {
        let x = Array4::from_shape_fn((1, 3, 4, 1), |(_, t, f, _)| (t * 10 + f) as f64);
        let (y, _) = max_pool_freq(&x, 2);
        assert_eq!(y.dim(), (1, 3, 2, 1));
        assert_eq!(y[[0, 2, 1, 0]], 23.0);
    }

    #[test]
    fn one_by_one_conv_is_channel_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(2, 3, (1, 1), &mut rng);
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, t, f, c)| (t + 2 * f + 3 * c) as f64);
        let (y, _) = conv.forward(&x);
        for t in 0..2 {
            for f in 0..2 {
                for o in 0..3 {
                    let want: f64 = (0..2).map(|c| conv.weight.value[[o, c]] * x[[0, t, f, c]]).sum();
                    assert!((y[[0, t, f, o]] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let bn = BatchNorm::new(2);
        let x = Array4::from_shape_fn((2, 3, 2, 2), |(b, t, f, c)| (b * 7 + t * 3 + f) as f64 * (c + 1) as f64);
        let (y, _) = bn.forward_train(&x);
        let rows = y.into_shape_with_order((12, 2)).unwrap();
        for m in rows.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-12);
        }
    }
}
