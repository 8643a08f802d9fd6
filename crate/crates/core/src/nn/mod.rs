//! Minimal neural-network layers with hand-written backward passes.
//!
//! Every layer follows the same pattern: `forward(&self, ..)` returns the
//! output together with a cache, and `backward(&mut self, cache, grad)`
//! accumulates parameter gradients and returns the input gradient. Forward
//! never mutates the layer, so a frozen network can be shared across
//! threads for inference.
//!
//! All arithmetic is `f64` and single-threaded, so results are bitwise
//! reproducible for a fixed seed.

mod adam;
pub mod gradcheck;
mod conv;
mod linear;
mod lstm;

pub use adam::{Adam, AdamConfig};
pub use conv::{BatchNorm, BatchNormCache, Conv2d, ConvCache, MaxPoolCache, max_pool_freq, max_pool_freq_backward};
pub use linear::{Linear, LinearCache};
pub use lstm::{BiLstmStack, LstmStackCache};

use ndarray::{Array2, ArrayD, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Negative slope of every LeakyReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

/// A trainable tensor (or a non-trainable buffer such as BatchNorm running
/// statistics) stored as a 2-D matrix. Biases are `1 x n` rows.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub buffer: bool,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            value,
            grad,
            buffer: false,
        }
    }

    pub fn buffer(value: Array2<f64>) -> Self {
        Param {
            buffer: true,
            ..Param::new(value)
        }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound));
        Param::new(value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Walks every named tensor of a network in a fixed order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(0.0));
    }

    /// Number of trainable scalars (buffers excluded).
    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if !p.buffer {
                n += p.len()
            }
        });
        n
    }

    /// Order-sensitive checksum over every tensor's bit pattern.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit("", &mut |_, p| {
            for v in p.value.iter() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        });
        h
    }
}

/// Returns `a` in row-major layout, copying only when needed.
pub(crate) fn standard<D: ndarray::Dimension>(a: ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn leaky_relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient of LeakyReLU given the pre-activation input.
pub fn leaky_relu_backward<D: ndarray::Dimension>(
    input: &ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(input).for_each(|g, &x| {
        if x <= 0.0 {
            *g *= LEAKY_SLOPE
        }
    });
    out
}

/// Row-wise softmax over the last axis of a 2-D matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Inverted-dropout mask: entries are 0 or `1/(1-p)`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let keep = 1.0 - p;
    ArrayD::from_shape_simple_fn(shape.to_vec(), || {
        if p > 0.0 && rng.random::<f64>() < p {
            0.0
        } else {
            1.0 / keep
        }
    })
}

/// Forward mode of a network.
pub enum Mode<'a> {
    /// Batch statistics, live dropout drawn from the given generator.
    Train(&'a mut ChaCha8Rng),
    /// Running statistics, no dropout.
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Applies dropout according to `mode`, returning the output and the mask used
/// (`None` in evaluation mode).
pub fn apply_dropout<D: ndarray::Dimension>(
    x: ndarray::Array<f64, D>,
    p: f64,
    mode: &mut Mode<'_>,
) -> (ndarray::Array<f64, D>, Option<ndarray::Array<f64, D>>) {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let mask = dropout_mask(x.shape(), p, rng)
                .into_dimensionality::<D>()
                .expect("mask shares the input shape");
            (&x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]]);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_slope() {
        let x = array![-2.0, 0.0, 3.0];
        assert_eq!(leaky_relu(&x), array![-0.02, 0.0, 3.0]);
        let g = leaky_relu_backward(&x, &array![1.0, 1.0, 1.0]);
        assert_eq!(g, array![0.01, 0.01, 1.0]);
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = dropout_mask(&[1000], 0.3, &mut rng);
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 600 && kept < 800);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
    }
}
