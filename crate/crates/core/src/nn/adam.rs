use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily, in the
/// network's visitation order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Global L2 norm over all trainable gradients.
    pub fn grad_norm(net: &dyn Parameterized) -> f64 {
        let mut sq = 0.0;
        net.visit("", &mut |_, p| {
            if !p.buffer {
                sq += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(net: &mut dyn Parameterized, max_norm: f64) -> f64 {
        let norm = Self::grad_norm(net);
        if norm > max_norm {
            let scale = max_norm / (norm + 1e-12);
            net.visit_mut("", &mut |_, p| {
                if !p.buffer {
                    p.grad.mapv_inplace(|g| g * scale)
                }
            });
        }
        norm
    }

    pub fn step(&mut self, net: &mut dyn Parameterized) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_mut("", &mut |_, p| {
            if p.buffer {
                return;
            }
            if m.len() <= k {
                m.push(Array2::zeros(p.value.raw_dim()));
                v.push(Array2::zeros(p.value.raw_dim()));
            }
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut m[k])
                .and(&mut v[k])
                .for_each(|w, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            k += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Param};

    struct Quadratic(Param);

    impl Parameterized for Quadratic {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
            f(&join(prefix, "x"), &self.0)
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            f(&join(prefix, "x"), &mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quadratic(Param::new(Array2::from_elem((1, 2), 1.0)));
        q.0.grad = Array2::from_shape_vec((1, 2), vec![4.0, -0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut q);
        assert!((q.0.value[[0, 0]] - 0.999).abs() < 1e-9);
        assert!((q.0.value[[0, 1]] - 1.001).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut q = Quadratic(Param::new(Array2::zeros((1, 2))));
        q.0.grad = Array2::from_shape_vec((1, 2), vec![30.0, 40.0]).unwrap();
        let before = Adam::clip_grad_norm(&mut q, 5.0);
        assert!((before - 50.0).abs() < 1e-12);
        assert!((Adam::grad_norm(&q) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quadratic(Param::new(Array2::from_elem((1, 1), 3.0)));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..500 {
            q.0.grad = &q.0.value * 2.0;
            adam.step(&mut q);
        }
        assert!(q.0.value[[0, 0]].abs() < 1e-2);
    }
}
