//! Stacked bidirectional LSTM over `[batch, time, features]` sequences.
//!
//! Gate order inside the `4H` blocks is input, forget, cell, output. Each
//! direction carries one fused bias.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand_chacha::ChaCha8Rng;

use super::{join, standard, Param, Parameterized};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
struct LstmDirection {
    w_ih: Param,
    w_hh: Param,
    bias: Param,
    hidden: usize,
    reverse: bool,
}

struct DirectionCache {
    /// Input flattened to `[batch * time, in]`.
    input: Array2<f64>,
    /// Activated gates `[batch, time, 4H]`.
    gates: Array3<f64>,
    cells: Array3<f64>,
    hidden: Array3<f64>,
}

impl LstmDirection {
    fn new(inputs: usize, hidden: usize, reverse: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmDirection {
            w_ih: Param::uniform(4 * hidden, inputs, bound, rng),
            w_hh: Param::uniform(4 * hidden, hidden, bound, rng),
            bias: Param::uniform(1, 4 * hidden, bound, rng),
            hidden,
            reverse,
        }
    }

    fn order(&self, t: usize) -> Vec<usize> {
        if self.reverse {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        }
    }

    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, DirectionCache) {
        let (b, t, d) = x.dim();
        let h = self.hidden;
        let input = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * t, d))
            .expect("contiguous");
        let pre = standard(input.dot(&self.w_ih.value.t()) + &self.bias.value)
            .into_shape_with_order((b, t, 4 * h))
            .expect("row count matches");
        let mut gates = Array3::<f64>::zeros((b, t, 4 * h));
        let mut cells = Array3::<f64>::zeros((b, t, h));
        let mut hidden = Array3::<f64>::zeros((b, t, h));
        let mut h_prev = Array2::<f64>::zeros((b, h));
        let mut c_prev = Array2::<f64>::zeros((b, h));
        for ti in self.order(t) {
            let mut z = pre.slice(s![.., ti, ..]).to_owned();
            ndarray::linalg::general_mat_mul(1.0, &h_prev, &self.w_hh.value.t(), 1.0, &mut z);
            for mut row in z.rows_mut() {
                let (ifg, o) = row.view_mut().split_at(Axis(0), 3 * h);
                let (i_f, g) = ifg.split_at(Axis(0), 2 * h);
                i_f.into_iter().for_each(|v| *v = sigmoid(*v));
                g.into_iter().for_each(|v| *v = v.tanh());
                o.into_iter().for_each(|v| *v = sigmoid(*v));
            }
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..]);
            let c = &f * &c_prev + &i * &g;
            let hn = &o * &c.mapv(f64::tanh);
            gates.slice_mut(s![.., ti, ..]).assign(&z);
            cells.slice_mut(s![.., ti, ..]).assign(&c);
            hidden.slice_mut(s![.., ti, ..]).assign(&hn);
            h_prev = hn;
            c_prev = c;
        }
        let out = hidden.clone();
        (
            out,
            DirectionCache {
                input,
                gates,
                cells,
                hidden,
            },
        )
    }

    fn backward(&mut self, cache: &DirectionCache, grad: &Array3<f64>) -> Array3<f64> {
        let (b, t, h4) = cache.gates.dim();
        let h = self.hidden;
        let d = cache.input.ncols();
        let order = self.order(t);
        let mut dz_all = Array3::<f64>::zeros((b, t, h4));
        // Hidden state fed into each step, for dW_hh.
        let mut h_in = Array3::<f64>::zeros((b, t, h));
        let mut dh_next = Array2::<f64>::zeros((b, h));
        let mut dc_next = Array2::<f64>::zeros((b, h));
        for (k, &ti) in order.iter().enumerate().rev() {
            let prev = if k > 0 { Some(order[k - 1]) } else { None };
            let gates = cache.gates.slice(s![.., ti, ..]);
            let i = gates.slice(s![.., 0..h]);
            let f = gates.slice(s![.., h..2 * h]);
            let g = gates.slice(s![.., 2 * h..3 * h]);
            let o = gates.slice(s![.., 3 * h..]);
            let c = cache.cells.slice(s![.., ti, ..]);
            let zeros = Array2::<f64>::zeros((b, h));
            let c_prev: ArrayView2<f64> = match prev {
                Some(p) => cache.cells.slice(s![.., p, ..]),
                None => zeros.view(),
            };
            if let Some(p) = prev {
                h_in.slice_mut(s![.., ti, ..]).assign(&cache.hidden.slice(s![.., p, ..]));
            }
            let dh = &grad.slice(s![.., ti, ..]) + &dh_next;
            let tc = c.mapv(f64::tanh);
            let mut dz = dz_all.slice_mut(s![.., ti, ..]);
            let mut dc = dc_next.clone();
            Zip::from(&mut dc).and(&dh).and(&o).and(&tc).for_each(|dc, &dh, &o, &tc| {
                *dc += dh * o * (1.0 - tc * tc);
            });
            Zip::from(dz.slice_mut(s![.., 3 * h..]))
                .and(&dh)
                .and(&tc)
                .and(&o)
                .for_each(|dz, &dh, &tc, &o| *dz = dh * tc * o * (1.0 - o));
            Zip::from(dz.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&g)
                .and(&i)
                .for_each(|dz, &dc, &g, &i| *dz = dc * g * i * (1.0 - i));
            Zip::from(dz.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(&c_prev)
                .and(&f)
                .for_each(|dz, &dc, &cp, &f| *dz = dc * cp * f * (1.0 - f));
            Zip::from(dz.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&i)
                .and(&g)
                .for_each(|dz, &dc, &i, &g| *dz = dc * i * (1.0 - g * g));
            dc_next = &dc * &f;
            dh_next = dz.dot(&self.w_hh.value);
        }
        let dz2 = dz_all.into_shape_with_order((b * t, h4)).expect("contiguous");
        let h_in2 = h_in.into_shape_with_order((b * t, h)).expect("contiguous");
        ndarray::linalg::general_mat_mul(1.0, &dz2.t(), &cache.input, 1.0, &mut self.w_ih.grad);
        ndarray::linalg::general_mat_mul(1.0, &dz2.t(), &h_in2, 1.0, &mut self.w_hh.grad);
        self.bias.grad += &dz2.sum_axis(Axis(0)).insert_axis(Axis(0));
        standard(dz2.dot(&self.w_ih.value))
            .into_shape_with_order((b, t, d))
            .expect("row count matches")
    }
}

#[derive(Debug, Clone)]
struct BiLstm {
    fwd: LstmDirection,
    bwd: LstmDirection,
}

/// A stack of bidirectional LSTM layers; each layer emits `2H` features
/// (forward half first).
#[derive(Debug, Clone)]
pub struct BiLstmStack {
    layers: Vec<BiLstm>,
    hidden: usize,
}

pub struct LstmStackCache {
    layers: Vec<(DirectionCache, DirectionCache)>,
}

impl BiLstmStack {
    pub fn new(inputs: usize, hidden: usize, num_layers: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(num_layers >= 1, "at least one LSTM layer");
        let layers = (0..num_layers)
            .map(|l| {
                let d = if l == 0 { inputs } else { 2 * hidden };
                BiLstm {
                    fwd: LstmDirection::new(d, hidden, false, rng),
                    bwd: LstmDirection::new(d, hidden, true, rng),
                }
            })
            .collect();
        BiLstmStack { layers, hidden }
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, LstmStackCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (yf, cf) = layer.fwd.forward(&cur);
            let (yb, cb) = layer.bwd.forward(&cur);
            cur = ndarray::concatenate(Axis(2), &[yf.view(), yb.view()]).expect("same batch and time");
            caches.push((cf, cb));
        }
        (cur, LstmStackCache { layers: caches })
    }

    pub fn backward(&mut self, cache: &LstmStackCache, grad: &Array3<f64>) -> Array3<f64> {
        let h = self.hidden;
        let mut g = grad.clone();
        for (layer, (cf, cb)) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let gf = g.slice(s![.., .., 0..h]).to_owned();
            let gb = g.slice(s![.., .., h..]).to_owned();
            let dxf = layer.fwd.backward(cf, &gf);
            let dxb = layer.bwd.backward(cb, &gb);
            g = dxf + dxb;
        }
        g
    }
}

impl Parameterized for BiLstmStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, name) in [(&layer.fwd, "fwd"), (&layer.bwd, "bwd")] {
                let p = join(prefix, &format!("l{l}.{name}"));
                f(&join(&p, "w_ih"), &dir.w_ih);
                f(&join(&p, "w_hh"), &dir.w_hh);
                f(&join(&p, "bias"), &dir.bias);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (dir, name) in [(&mut layer.fwd, "fwd"), (&mut layer.bwd, "bwd")] {
                let p = join(prefix, &format!("l{l}.{name}"));
                f(&join(&p, "w_ih"), &mut dir.w_ih);
                f(&join(&p, "w_hh"), &mut dir.w_hh);
                f(&join(&p, "bias"), &mut dir.bias);
            }
        }
    }
}
