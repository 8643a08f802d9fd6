//! Convolutional-recurrent classifiers for the four bowing/fingering streams.
//!
//! Each stream (bow direction, string, finger, position) gets its own
//! network: three convolution blocks (conv, batch norm, frequency max-pool,
//! LeakyReLU), a bidirectional LSTM stack over time, dropout, and two fully
//! connected layers ending in a per-frame softmax.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{self, Feature};
use crate::nn::{
    self, apply_dropout, leaky_relu, leaky_relu_backward, max_pool_freq, max_pool_freq_backward, BatchNorm,
    BatchNormCache, BiLstmStack, Conv2d, ConvCache, Linear, LinearCache, LstmStackCache, MaxPoolCache, Mode, Param,
    Parameterized,
};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before the logarithm.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfBranchConfig {
    pub n_mels: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<(usize, usize)>,
    pub pool_freq: Vec<usize>,
    pub rnn_layers: usize,
    /// Hidden size per direction.
    pub rnn_hidden: usize,
    pub dropout: f64,
    pub fc_hidden: usize,
    pub n_classes: usize,
}

impl Default for BfBranchConfig {
    fn default() -> Self {
        Self::for_feature(Feature::Bow)
    }
}

impl BfBranchConfig {
    /// Full-size network for one label stream.
    pub fn for_feature(feature: Feature) -> Self {
        BfBranchConfig {
            n_mels: 128,
            conv_channels: vec![32, 64, 128],
            conv_kernels: vec![(1, 1), (3, 3), (3, 3)],
            pool_freq: vec![4, 2, 2],
            rnn_layers: 2,
            rnn_hidden: 512,
            dropout: 0.3,
            fc_hidden: 64,
            n_classes: feature.n_classes(),
        }
    }

    /// Minimal network for gradient checks: channels [2,2,2], hidden 8,
    /// 16 feature bins.
    pub fn tiny(feature: Feature) -> Self {
        BfBranchConfig {
            n_mels: 16,
            conv_channels: vec![2, 2, 2],
            rnn_hidden: 8,
            fc_hidden: 8,
            ..Self::for_feature(feature)
        }
    }

    /// Same layer structure with narrow layers, sized for single-core CPU
    /// experiments on the synthetic corpus.
    pub fn desk(feature: Feature) -> Self {
        BfBranchConfig {
            conv_channels: vec![8, 16, 16],
            rnn_hidden: 32,
            ..Self::for_feature(feature)
        }
    }

    pub fn pooled_freq(&self) -> usize {
        self.n_mels / self.pool_freq.iter().product::<usize>()
    }

    /// Width of each frame entering the recurrent stack.
    pub fn rnn_input_width(&self) -> usize {
        self.pooled_freq() * self.conv_channels.last().copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.conv_channels.len();
        if blocks == 0 || self.conv_kernels.len() != blocks || self.pool_freq.len() != blocks {
            return Err(Error::Config(
                "conv_channels, conv_kernels and pool_freq need one entry per block".into(),
            ));
        }
        if self.conv_channels.contains(&0) || self.pool_freq.contains(&0) {
            return Err(Error::Config("channel counts and pool sizes must be positive".into()));
        }
        if self.conv_kernels.iter().any(|&(kt, kf)| kt % 2 == 0 || kf % 2 == 0) {
            return Err(Error::Config("convolution kernels must have odd sizes".into()));
        }
        let pool: usize = self.pool_freq.iter().product();
        if self.n_mels == 0 || !self.n_mels.is_multiple_of(pool) {
            return Err(Error::Config(format!(
                "n_mels {} is not divisible by the total frequency pooling {pool}",
                self.n_mels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.rnn_layers == 0 || self.rnn_hidden == 0 || self.fc_hidden == 0 || self.n_classes < 2 {
            return Err(Error::Config("layer sizes must be positive and n_classes at least 2".into()));
        }
        Ok(())
    }
}

/// Per-frame class probabilities, `T x n_classes`, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BfProbabilities {
    pub data: Array2<f64>,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
    pool: usize,
}

/// One stream's classifier.
#[derive(Debug, Clone)]
pub struct BfNetwork {
    config: BfBranchConfig,
    blocks: Vec<ConvBlock>,
    rnn: BiLstmStack,
    fc1: Linear,
    fc2: Linear,
}

struct BlockCache {
    conv: ConvCache,
    bn: Option<BatchNormCache>,
    pool: MaxPoolCache,
    pooled: Array4<f64>,
}

/// Intermediate values of a forward pass, needed for the backward pass.
pub struct BfCache {
    blocks: Vec<BlockCache>,
    pooled_shape: [usize; 4],
    rnn: LstmStackCache,
    mask: Option<Array3<f64>>,
    fc1: LinearCache,
    fc1_pre: Array2<f64>,
    fc2: LinearCache,
}

impl BfNetwork {
    pub fn new(config: BfBranchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        let blocks = config
            .conv_channels
            .iter()
            .zip(&config.conv_kernels)
            .zip(&config.pool_freq)
            .map(|((&c, &k), &pool)| {
                let conv = Conv2d::new(in_ch, c, k, &mut rng);
                in_ch = c;
                ConvBlock {
                    conv,
                    bn: BatchNorm::new(c),
                    pool,
                }
            })
            .collect();
        let rnn = BiLstmStack::new(config.rnn_input_width(), config.rnn_hidden, config.rnn_layers, &mut rng);
        let fc1 = Linear::new(rnn.output_width(), config.fc_hidden, &mut rng);
        let fc2 = Linear::new(config.fc_hidden, config.n_classes, &mut rng);
        Ok(BfNetwork {
            config,
            blocks,
            rnn,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &BfBranchConfig {
        &self.config
    }

    /// Logits for a batch of normalized feature clips `[B, T, F]`, flattened
    /// to `[B * T, n_classes]`.
    pub fn forward_logits(&self, x: &Array3<f64>, mode: &mut Mode<'_>) -> Result<(Array2<f64>, BfCache)> {
        let (b, t, f) = x.dim();
        if f != self.config.n_mels {
            return Err(Error::DimensionMismatch(format!(
                "features have {f} bins, network expects {}",
                self.config.n_mels
            )));
        }
        if t == 0 || b == 0 {
            return Err(Error::EmptySequence("no frames to classify".into()));
        }
        let mut h = nn::standard(x.to_owned()).into_shape_with_order((b, t, f, 1)).expect("contiguous");
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, conv) = block.conv.forward(&h);
            let (y, bn) = if mode.is_train() {
                let (y, c) = block.bn.forward_train(&y);
                (y, Some(c))
            } else {
                (block.bn.forward_eval(&y), None)
            };
            let (pooled, pool) = max_pool_freq(&y, block.pool);
            h = leaky_relu(&pooled);
            caches.push(BlockCache { conv, bn, pool, pooled });
        }
        let (_, _, fp, c) = h.dim();
        let pooled_shape = [b, t, fp, c];
        let seq = nn::standard(h).into_shape_with_order((b, t, fp * c)).expect("contiguous");
        let (rnn_out, rnn) = self.rnn.forward(&seq);
        let (dropped, mask) = apply_dropout(rnn_out, self.config.dropout, mode);
        let width = dropped.dim().2;
        let flat = nn::standard(dropped).into_shape_with_order((b * t, width)).expect("contiguous");
        let (fc1_pre, fc1) = self.fc1.forward(flat);
        let (logits, fc2) = self.fc2.forward(leaky_relu(&fc1_pre));
        Ok((
            logits,
            BfCache {
                blocks: caches,
                pooled_shape,
                rnn,
                mask,
                fc1,
                fc1_pre,
                fc2,
            },
        ))
    }

    /// Per-frame probabilities `[B, T, n_classes]`.
    pub fn forward_batch(&self, x: &Array3<f64>, mode: &mut Mode<'_>) -> Result<(Array3<f64>, BfCache)> {
        let (b, t, _) = x.dim();
        let (logits, cache) = self.forward_logits(x, mode)?;
        let probs = nn::standard(nn::softmax_rows(&logits))
            .into_shape_with_order((b, t, self.config.n_classes))
            .expect("contiguous");
        Ok((probs, cache))
    }

    /// Applies the batch statistics of a training pass to the running
    /// statistics of every batch-norm layer.
    pub fn update_batch_stats(&mut self, cache: &BfCache) {
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let Some(bn) = &c.bn {
                block.bn.update_running(bn);
            }
        }
    }

    /// Accumulates parameter gradients given the loss gradient with respect
    /// to the logits, `[B * T, n_classes]`.
    pub fn backward(&mut self, cache: &BfCache, dlogits: &Array2<f64>) {
        let [b, t, fp, c] = cache.pooled_shape;
        let g = self.fc2.backward(&cache.fc2, dlogits);
        let g = leaky_relu_backward(&cache.fc1_pre, &g);
        let g = self.fc1.backward(&cache.fc1, &g);
        let width = g.ncols();
        let mut g = nn::standard(g).into_shape_with_order((b, t, width)).expect("contiguous");
        if let Some(mask) = &cache.mask {
            g *= mask;
        }
        let g = self.rnn.backward(&cache.rnn, &g);
        let mut g = nn::standard(g).into_shape_with_order((b, t, fp, c)).expect("contiguous");
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let d = leaky_relu_backward(&bc.pooled, &g);
            let d = max_pool_freq_backward(&bc.pool, &d);
            let d = match &bc.bn {
                Some(bn) => block.bn.backward(bn, &d),
                None => panic!("backward through an evaluation-mode pass"),
            };
            g = block.conv.backward(&bc.conv, &d);
        }
    }
}

impl Parameterized for BfNetwork {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv.visit(&nn::join(prefix, &format!("block{i}.conv")), f);
            b.bn.visit(&nn::join(prefix, &format!("block{i}.bn")), f);
        }
        self.rnn.visit(&nn::join(prefix, "rnn"), f);
        self.fc1.visit(&nn::join(prefix, "fc1"), f);
        self.fc2.visit(&nn::join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.conv.visit_mut(&nn::join(prefix, &format!("block{i}.conv")), f);
            b.bn.visit_mut(&nn::join(prefix, &format!("block{i}.bn")), f);
        }
        self.rnn.visit_mut(&nn::join(prefix, "rnn"), f);
        self.fc1.visit_mut(&nn::join(prefix, "fc1"), f);
        self.fc2.visit_mut(&nn::join(prefix, "fc2"), f);
    }
}

/// Builds a freshly initialized network.
pub fn build_bf_network(config: BfBranchConfig, seed: u64) -> Result<BfNetwork> {
    BfNetwork::new(config, seed)
}

/// Evaluation-mode probabilities for one normalized `T x F` feature matrix.
pub fn bf_forward(net: &BfNetwork, mel: &Array2<f64>) -> Result<BfProbabilities> {
    let x = mel.view().insert_axis(Axis(0)).to_owned();
    let (p, _) = net.forward_batch(&x, &mut Mode::Eval)?;
    Ok(BfProbabilities {
        data: p.index_axis_move(Axis(0), 0),
    })
}

/// One-hot of the most probable class per frame; ties go to the lowest index.
pub fn decode_onehot(p: &BfProbabilities) -> Array2<f64> {
    let mut out = Array2::zeros(p.data.raw_dim());
    for (t, row) in p.data.rows().into_iter().enumerate() {
        out[[t, labels::argmax(row)]] = 1.0;
    }
    out
}

/// Most probable class per frame (0-based).
pub fn decode_classes(p: &BfProbabilities) -> Vec<usize> {
    p.data.rows().into_iter().map(labels::argmax).collect()
}

fn check_shapes(p: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if p.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "probabilities {:?} vs target {:?}",
            p.dim(),
            target.dim()
        )));
    }
    if p.nrows() == 0 {
        return Err(Error::EmptySequence("no frames in loss".into()));
    }
    Ok(())
}

/// Mean per-frame cross-entropy `-(1/T) sum_t sum_c y[t,c] log p[t,c]`,
/// with probabilities clamped to `[PROB_FLOOR, 1]`.
pub fn ce_loss(p: &BfProbabilities, target: &Array2<f64>) -> Result<f64> {
    check_shapes(&p.data, target)?;
    let t = p.data.nrows() as f64;
    let sum: f64 = p
        .data
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&q, &y)| y * q.clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(-sum / t)
}

/// Gradient of [`ce_loss`] with respect to the softmax logits. Clamped
/// entries contribute no gradient through their logarithm.
pub fn ce_loss_grad_logits(p: &Array2<f64>, target: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(p, target)?;
    let t = p.nrows() as f64;
    let mut grad = Array2::zeros(p.raw_dim());
    for ((mut g, prow), yrow) in grad.rows_mut().into_iter().zip(p.rows()).zip(target.rows()) {
        let live = |q: f64| q > PROB_FLOOR;
        let active: f64 = prow.iter().zip(yrow).filter(|(&q, _)| live(q)).map(|(_, &y)| y).sum();
        for ((gc, &q), &y) in g.iter_mut().zip(prow).zip(yrow) {
            let own = if live(q) { y } else { 0.0 };
            *gc = (q * active - own) / t;
        }
    }
    Ok(grad)
}

/// Loss and logits-gradient for a batch, averaging over all `B * T` frames.
pub fn batch_ce(probs: &Array3<f64>, targets: &Array3<f64>) -> Result<(f64, Array2<f64>)> {
    let (b, t, n) = probs.dim();
    let p = nn::standard(probs.to_owned()).into_shape_with_order((b * t, n)).expect("contiguous");
    let y = nn::standard(targets.to_owned()).into_shape_with_order((b * t, n)).map_err(|_| {
        Error::DimensionMismatch(format!("targets {:?} vs probabilities {:?}", targets.dim(), (b, t, n)))
    })?;
    let pp = BfProbabilities { data: p };
    let loss = ce_loss(&pp, &y)?;
    let grad = ce_loss_grad_logits(&pp.data, &y)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> BfBranchConfig {
        BfBranchConfig::tiny(Feature::Str)
    }

    fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_rnn_input_is_1024() {
        let c = BfBranchConfig::for_feature(Feature::Bow);
        c.validate().unwrap();
        assert_eq!(c.rnn_input_width(), 1024);
    }

    #[test]
    fn indivisible_mels_rejected() {
        let c = BfBranchConfig {
            n_mels: 100,
            ..BfBranchConfig::for_feature(Feature::Bow)
        };
        assert!(matches!(BfNetwork::new(c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let a = BfNetwork::new(BfBranchConfig::desk(Feature::Pos), 1).unwrap();
        let b = BfNetwork::new(BfBranchConfig::desk(Feature::Pos), 2).unwrap();
        assert_eq!(a.num_parameters(), b.num_parameters());
        assert_ne!(a.checksum(), b.checksum());
    }

    #[test]
    fn forward_preserves_time_and_normalizes() {
        let net = BfNetwork::new(tiny(), 0).unwrap();
        for t in [1, 7, 200] {
            let x = random((1, t, 16), t as u64).index_axis_move(Axis(0), 0);
            let p = bf_forward(&net, &x).unwrap();
            assert_eq!(p.data.dim(), (t, 5));
            for row in p.data.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|v| v.is_finite() && *v > 0.0));
            }
            assert_eq!(bf_forward(&net, &x).unwrap(), p);
        }
        assert!(matches!(
            bf_forward(&net, &Array2::zeros((3, 8))),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn decode_examples() {
        let p = BfProbabilities {
            data: array![[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]],
        };
        let d = decode_onehot(&p);
        assert_eq!(d, array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(decode_onehot(&BfProbabilities { data: d.clone() }), d);
    }

    #[test]
    fn ce_examples() {
        let uniform = BfProbabilities {
            data: Array2::from_elem((4, 3), 1.0 / 3.0),
        };
        let target = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert!((ce_loss(&uniform, &target).unwrap() - 3f64.ln()).abs() < 1e-12);

        let p = BfProbabilities {
            data: array![[0.5, 0.5], [0.25, 0.75]],
        };
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let want = -(0.5f64.ln() + 0.75f64.ln()) / 2.0;
        assert!((ce_loss(&p, &y).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.4904).abs() < 1e-4);

        let perfect = BfProbabilities { data: y.clone() };
        assert!(ce_loss(&perfect, &y).unwrap() <= 1e-6);
        assert!(matches!(
            ce_loss(&perfect, &Array2::zeros((3, 2))),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = BfNetwork::new(tiny(), 3).unwrap();
        let x = random((2, 4, 16), 11);
        let mut targets = Array3::zeros((2, 4, 5));
        for (i, mut row) in targets.rows_mut().into_iter().enumerate() {
            row[(i * 3) % 5] = 1.0;
        }
        let report = check_gradients(
            &mut net,
            |net, grad| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                let (probs, cache) = net.forward_batch(&x, &mut Mode::Train(&mut rng)).unwrap();
                let (loss, dlogits) = batch_ce(&probs, &targets).unwrap();
                if grad {
                    net.backward(&cache, &dlogits);
                }
                loss
            },
            DEFAULT_STEP,
            DEFAULT_FLOOR,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, net.num_parameters());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn decoding_ignores_positive_row_scaling(
            row in prop::collection::vec(0.01f64..1.0, 2..13),
            scale in 0.1f64..10.0,
        ) {
            let n = row.len();
            let p = Array2::from_shape_vec((1, n), row).unwrap();
            let a = decode_onehot(&BfProbabilities { data: p.clone() });
            let scaled = &p * scale;
            let renorm = &scaled / scaled.sum();
            prop_assert_eq!(a, decode_onehot(&BfProbabilities { data: renorm }));
        }

        #[test]
        fn random_inputs_give_stochastic_rows(t in 1usize..20, seed in 0u64..1000) {
            let net = BfNetwork::new(tiny(), seed).unwrap();
            let x = random((1, t, 16), seed).index_axis_move(Axis(0), 0);
            let p = bf_forward(&net, &x).unwrap();
            prop_assert_eq!(p.data.nrows(), t);
            for row in p.data.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
}
