use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{join, Param, Parameterized};

/// Fully connected layer `y = x W^T + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearCache {
    input: Array2<f64>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Param::uniform(outputs, inputs, bound, rng),
            bias: Param::uniform(1, outputs, bound, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, LinearCache) {
        let y = x.dot(&self.weight.value.t()) + &self.bias.value;
        (y, LinearCache { input: x })
    }

    pub fn backward(&mut self, cache: &LinearCache, grad: &Array2<f64>) -> Array2<f64> {
        ndarray::linalg::general_mat_mul(1.0, &grad.t(), &cache.input, 1.0, &mut self.weight.grad);
        self.bias.grad += &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.dot(&self.weight.value)
    }
}

impl Parameterized for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
