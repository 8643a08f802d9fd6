//! Motion generator: per-frame bowing/fingering labels and Mel features in,
//! 3-D joint positions out.
//!
//! Both inputs are embedded by a fully connected layer with LeakyReLU and
//! concatenated. The joint set is split into body groups, and each group is
//! regressed by its own bidirectional LSTM branch with dropout and a linear
//! head. Branch outputs are scattered back to their joint indices, so joint
//! `j` always lands in slot `j` whatever the evaluation order.

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MotionSequence;
use crate::error::{Error, Result};
use crate::labels::BF_WIDTH;
use crate::nn::{
    self, apply_dropout, leaky_relu, leaky_relu_backward, BiLstmStack, Linear, LinearCache, LstmStackCache, Mode,
    Param, Parameterized,
};
use crate::skeleton::{Branch, SkeletonSchema};

/// Default weight of the displacement term.
pub const DEFAULT_LAMBDA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub layers: usize,
    /// Hidden size per direction.
    pub hidden: usize,
}

impl BranchSpec {
    pub const fn new(layers: usize, hidden: usize) -> Self {
        BranchSpec { layers, hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionBranchConfig {
    pub n_mels: usize,
    /// Width of the concatenated label input; smaller than 27 when label
    /// streams are ablated.
    pub bf_width: usize,
    pub bf_embed_dim: usize,
    pub mel_embed_dim: usize,
    pub dropout: f64,
    pub left_hand: BranchSpec,
    pub left_arm: BranchSpec,
    pub right_hand_arm: BranchSpec,
    pub others: BranchSpec,
    /// When set, one recurrent stack of `single_branch_size` regresses every
    /// joint instead of the four group branches.
    pub single_branch: bool,
    pub single_branch_size: BranchSpec,
}

impl Default for MotionBranchConfig {
    fn default() -> Self {
        MotionBranchConfig {
            n_mels: 128,
            bf_width: BF_WIDTH,
            bf_embed_dim: 16,
            mel_embed_dim: 128,
            dropout: 0.3,
            left_hand: BranchSpec::new(2, 256),
            left_arm: BranchSpec::new(2, 256),
            right_hand_arm: BranchSpec::new(2, 512),
            others: BranchSpec::new(3, 128),
            single_branch: false,
            single_branch_size: BranchSpec::new(2, 512),
        }
    }
}

impl MotionBranchConfig {
    /// Same structure with narrow recurrent layers for single-core CPU runs.
    pub fn desk() -> Self {
        MotionBranchConfig {
            left_hand: BranchSpec::new(2, 32),
            left_arm: BranchSpec::new(2, 32),
            right_hand_arm: BranchSpec::new(2, 48),
            others: BranchSpec::new(3, 24),
            single_branch_size: BranchSpec::new(2, 48),
            ..Self::default()
        }
    }

    /// Minimal network for gradient checks: every branch hidden size 8,
    /// embeddings 4 and 8, 16 feature bins. Pair with
    /// [`SkeletonSchema::tiny`].
    pub fn tiny() -> Self {
        MotionBranchConfig {
            n_mels: 16,
            bf_embed_dim: 4,
            mel_embed_dim: 8,
            left_hand: BranchSpec::new(2, 8),
            left_arm: BranchSpec::new(2, 8),
            right_hand_arm: BranchSpec::new(2, 8),
            others: BranchSpec::new(3, 8),
            ..MotionBranchConfig::default()
        }
    }

    /// The same configuration with one shared branch replacing the four.
    pub fn single_branch_variant(self) -> Self {
        MotionBranchConfig {
            single_branch: true,
            ..self
        }
    }

    pub fn branch(&self, b: Branch) -> BranchSpec {
        match b {
            Branch::LeftHand => self.left_hand,
            Branch::LeftArm => self.left_arm,
            Branch::RightHandArm => self.right_hand_arm,
            Branch::Others => self.others,
        }
    }

    pub fn embed_width(&self) -> usize {
        self.bf_embed_dim + self.mel_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.bf_width == 0 || self.bf_embed_dim == 0 || self.mel_embed_dim == 0 {
            return Err(Error::Config("input and embedding widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let specs = Branch::ALL.iter().map(|&b| self.branch(b)).chain([self.single_branch_size]);
        for spec in specs {
            if spec.layers == 0 || spec.hidden == 0 {
                return Err(Error::Config("branch layers and hidden sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct MotionBranch {
    name: &'static str,
    joints: Vec<usize>,
    rnn: BiLstmStack,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct MotionNetwork {
    config: MotionBranchConfig,
    n_joints: usize,
    bf_fc: Linear,
    mel_fc: Linear,
    branches: Vec<MotionBranch>,
}

struct BranchCache {
    rnn: LstmStackCache,
    mask: Option<Array3<f64>>,
    head: LinearCache,
}

pub struct MotionCache {
    shape: (usize, usize),
    bf_fc: LinearCache,
    bf_pre: Array2<f64>,
    mel_fc: LinearCache,
    mel_pre: Array2<f64>,
    branches: Vec<BranchCache>,
}

fn flatten3(x: &Array3<f64>) -> Array2<f64> {
    let (b, t, w) = x.dim();
    nn::standard(x.to_owned()).into_shape_with_order((b * t, w)).expect("contiguous")
}

impl MotionNetwork {
    pub fn new(config: MotionBranchConfig, schema: &SkeletonSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bf_fc = Linear::new(config.bf_width, config.bf_embed_dim, &mut rng);
        let mel_fc = Linear::new(config.n_mels, config.mel_embed_dim, &mut rng);
        let e = config.embed_width();
        let mut make = |name, joints: Vec<usize>, spec: BranchSpec| {
            let rnn = BiLstmStack::new(e, spec.hidden, spec.layers, &mut rng);
            let head = Linear::new(rnn.output_width(), 3 * joints.len(), &mut rng);
            MotionBranch { name, joints, rnn, head }
        };
        let branches = match config.single_branch {
            true => vec![make("single", schema.all_joints(), config.single_branch_size)],
            false => Branch::ALL
                .iter()
                .map(|&b| make(b.name(), schema.groups.get(b).to_vec(), config.branch(b)))
                .collect(),
        };
        Ok(MotionNetwork {
            config,
            n_joints: schema.n_joints,
            bf_fc,
            mel_fc,
            branches,
        })
    }

    pub fn config(&self) -> &MotionBranchConfig {
        &self.config
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    /// Output width of each branch head, in branch order.
    pub fn head_widths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.head.outputs()).collect()
    }

    /// Predicts flat motion `[B, T, 3N]` from labels `[B, T, W]` and
    /// normalized features `[B, T, F]`.
    pub fn forward(
        &self,
        bf: &Array3<f64>,
        mel: &Array3<f64>,
        mode: &mut Mode<'_>,
    ) -> Result<(Array3<f64>, MotionCache)> {
        let order: Vec<usize> = (0..self.branches.len()).collect();
        self.forward_in_order(bf, mel, mode, &order)
    }

    pub(crate) fn forward_in_order(
        &self,
        bf: &Array3<f64>,
        mel: &Array3<f64>,
        mode: &mut Mode<'_>,
        order: &[usize],
    ) -> Result<(Array3<f64>, MotionCache)> {
        let (b, t, w) = bf.dim();
        let (mb, mt, f) = mel.dim();
        if (b, t) != (mb, mt) {
            return Err(Error::DimensionMismatch(format!(
                "labels cover {b}x{t} frames, features {mb}x{mt}"
            )));
        }
        if w != self.config.bf_width || f != self.config.n_mels {
            return Err(Error::DimensionMismatch(format!(
                "inputs {w}+{f} wide, network expects {}+{}",
                self.config.bf_width, self.config.n_mels
            )));
        }
        if b * t == 0 {
            return Err(Error::EmptySequence("no frames to generate".into()));
        }
        let (bf_pre, bf_fc) = self.bf_fc.forward(flatten3(bf));
        let (mel_pre, mel_fc) = self.mel_fc.forward(flatten3(mel));
        let emb = concatenate(Axis(1), &[leaky_relu(&bf_pre).view(), leaky_relu(&mel_pre).view()])
            .expect("same frame count");
        let emb = nn::standard(emb)
            .into_shape_with_order((b, t, self.config.embed_width()))
            .expect("contiguous");
        let mut out = Array2::<f64>::zeros((b * t, 3 * self.n_joints));
        let mut caches: Vec<Option<BranchCache>> = (0..self.branches.len()).map(|_| None).collect();
        for &k in order {
            let branch = &self.branches[k];
            let (h, rnn) = branch.rnn.forward(&emb);
            let (h, mask) = apply_dropout(h, self.config.dropout, mode);
            let (y, head) = branch.head.forward(flatten3(&h));
            for (i, &j) in branch.joints.iter().enumerate() {
                out.slice_mut(s![.., 3 * j..3 * j + 3]).assign(&y.slice(s![.., 3 * i..3 * i + 3]));
            }
            caches[k] = Some(BranchCache { rnn, mask, head });
        }
        let out = out.into_shape_with_order((b, t, 3 * self.n_joints)).expect("contiguous");
        Ok((
            out,
            MotionCache {
                shape: (b, t),
                bf_fc,
                bf_pre,
                mel_fc,
                mel_pre,
                branches: caches.into_iter().map(|c| c.expect("every branch evaluated")).collect(),
            },
        ))
    }

    /// Accumulates parameter gradients given `dL/d output`, `[B, T, 3N]`.
    pub fn backward(&mut self, cache: &MotionCache, grad: &Array3<f64>) {
        let (b, t) = cache.shape;
        let g = flatten3(grad);
        let e = self.config.embed_width();
        let mut demb = Array3::<f64>::zeros((b, t, e));
        for (branch, bc) in self.branches.iter_mut().zip(&cache.branches) {
            let mut gy = Array2::<f64>::zeros((b * t, 3 * branch.joints.len()));
            for (i, &j) in branch.joints.iter().enumerate() {
                gy.slice_mut(s![.., 3 * i..3 * i + 3]).assign(&g.slice(s![.., 3 * j..3 * j + 3]));
            }
            let gh = branch.head.backward(&bc.head, &gy);
            let width = gh.ncols();
            let mut gh = nn::standard(gh).into_shape_with_order((b, t, width)).expect("contiguous");
            if let Some(mask) = &bc.mask {
                gh *= mask;
            }
            demb += &branch.rnn.backward(&bc.rnn, &gh);
        }
        let demb = flatten3(&demb);
        let d_bf = leaky_relu_backward(&cache.bf_pre, &demb.slice(s![.., ..self.config.bf_embed_dim]).to_owned());
        let d_mel = leaky_relu_backward(&cache.mel_pre, &demb.slice(s![.., self.config.bf_embed_dim..]).to_owned());
        self.bf_fc.backward(&cache.bf_fc, &d_bf);
        self.mel_fc.backward(&cache.mel_fc, &d_mel);
    }
}

impl Parameterized for MotionNetwork {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.bf_fc.visit(&nn::join(prefix, "bf_fc"), f);
        self.mel_fc.visit(&nn::join(prefix, "mel_fc"), f);
        for b in &self.branches {
            b.rnn.visit(&nn::join(prefix, &format!("{}.rnn", b.name)), f);
            b.head.visit(&nn::join(prefix, &format!("{}.head", b.name)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.bf_fc.visit_mut(&nn::join(prefix, "bf_fc"), f);
        self.mel_fc.visit_mut(&nn::join(prefix, "mel_fc"), f);
        for b in &mut self.branches {
            b.rnn.visit_mut(&nn::join(prefix, &format!("{}.rnn", b.name)), f);
            b.head.visit_mut(&nn::join(prefix, &format!("{}.head", b.name)), f);
        }
    }
}

pub fn build_motion_network(config: MotionBranchConfig, schema: &SkeletonSchema, seed: u64) -> Result<MotionNetwork> {
    MotionNetwork::new(config, schema, seed)
}

/// Evaluation-mode generation for one piece: labels `T x W`, normalized
/// features `T x F`; returns normalized joint positions.
pub fn motion_forward(net: &MotionNetwork, bf: &Array2<f64>, mel: &Array2<f64>, frame_rate: f64) -> Result<MotionSequence> {
    if bf.nrows() != mel.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "labels have {} frames, features {}",
            bf.nrows(),
            mel.nrows()
        )));
    }
    let bf3 = bf.view().insert_axis(Axis(0)).to_owned();
    let mel3 = mel.view().insert_axis(Axis(0)).to_owned();
    let (out, _) = net.forward(&bf3, &mel3, &mut Mode::Eval)?;
    Ok(MotionSequence::from_flat(out.index_axis_move(Axis(0), 0), frame_rate))
}

fn same_shape(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.dim().0 == 0 {
        return Err(Error::EmptySequence("motion has no frames".into()));
    }
    Ok(())
}

fn flat(a: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (t, n, c) = a.dim();
    a.view().into_shape_with_order((t, n * c)).expect("standard layout motion")
}

/// Mean over frames of the summed per-joint L1 distance, `T x N x 3` inputs.
pub fn jp_loss(j: &Array3<f64>, j_hat: &Array3<f64>) -> Result<f64> {
    same_shape(j, j_hat)?;
    let (a, b) = (j.as_standard_layout(), j_hat.as_standard_layout());
    Ok(jp_loss_flat(flat(&a.to_owned()), flat(&b.to_owned())))
}

/// Frame-difference L1 loss, normalized by `T` over its `T - 1` terms.
pub fn dis_loss(j: &Array3<f64>, j_hat: &Array3<f64>) -> Result<f64> {
    same_shape(j, j_hat)?;
    if j.dim().0 < 2 {
        return Err(Error::TooShort("displacement needs at least two frames".into()));
    }
    let (a, b) = (j.as_standard_layout(), j_hat.as_standard_layout());
    Ok(dis_loss_flat(flat(&a.to_owned()), flat(&b.to_owned())))
}

pub fn total_loss(j: &Array3<f64>, j_hat: &Array3<f64>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda {lambda} must be non-negative")));
    }
    let jp = jp_loss(j, j_hat)?;
    if lambda == 0.0 {
        return Ok(jp);
    }
    Ok(jp + lambda * dis_loss(j, j_hat)?)
}

fn jp_loss_flat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let t = a.nrows() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / t
}

fn dis_loss_flat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let t = a.nrows();
    let mut sum = 0.0;
    for k in 1..t {
        for c in 0..a.ncols() {
            sum += ((a[[k, c]] - a[[k - 1, c]]) - (b[[k, c]] - b[[k - 1, c]])).abs();
        }
    }
    sum / t as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combined loss on one flat `T x 3N` clip and its gradient with respect to
/// the prediction.
pub fn total_loss_flat_grad(pred: ArrayView2<f64>, gt: ArrayView2<f64>, lambda: f64) -> (f64, Array2<f64>) {
    let t = pred.nrows();
    let tf = t as f64;
    let mut grad = Array2::<f64>::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for ((g, &p), &y) in grad.iter_mut().zip(pred).zip(gt) {
        loss += (p - y).abs();
        *g = sign(p - y) / tf;
    }
    loss /= tf;
    if lambda > 0.0 && t >= 2 {
        let mut dis = 0.0;
        for k in 1..t {
            for c in 0..pred.ncols() {
                let d = (pred[[k, c]] - pred[[k - 1, c]]) - (gt[[k, c]] - gt[[k - 1, c]]);
                dis += d.abs();
                let s = lambda * sign(d) / tf;
                grad[[k, c]] += s;
                grad[[k - 1, c]] -= s;
            }
        }
        loss += lambda * dis / tf;
    }
    (loss, grad)
}

/// Mean clip loss over a batch `[B, T, 3N]` and its gradient.
pub fn batch_total_loss(pred: &Array3<f64>, gt: &Array3<f64>, lambda: f64) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != gt.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", pred.dim(), gt.dim())));
    }
    let b = pred.dim().0 as f64;
    let mut grad = Array3::<f64>::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for ((p, y), mut g) in pred.outer_iter().zip(gt.outer_iter()).zip(grad.outer_iter_mut()) {
        let (l, gi) = total_loss_flat_grad(p, y, lambda);
        loss += l / b;
        g.assign(&(gi / b));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn tiny_schema() -> SkeletonSchema {
        SkeletonSchema::tiny()
    }

    fn tiny_config() -> MotionBranchConfig {
        MotionBranchConfig::tiny()
    }

    #[test]
    fn default_heads_cover_225_outputs() {
        let mut rng_free = MotionBranchConfig::default();
        rng_free.right_hand_arm = BranchSpec::new(1, 2);
        rng_free.left_hand = BranchSpec::new(1, 2);
        rng_free.left_arm = BranchSpec::new(1, 2);
        rng_free.others = BranchSpec::new(1, 2);
        let net = MotionNetwork::new(rng_free, &SkeletonSchema::default(), 0).unwrap();
        assert_eq!(net.head_widths(), vec![60, 9, 69, 87]);
        assert_eq!(net.head_widths().iter().sum::<usize>(), 225);
        assert_eq!(MotionBranchConfig::default().embed_width(), 144);
    }

    #[test]
    fn broken_schema_is_rejected() {
        let mut schema = SkeletonSchema::default();
        schema.groups.others.retain(|&j| j != 74);
        assert!(matches!(
            MotionNetwork::new(MotionBranchConfig::desk(), &schema, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_shapes_and_scatter_order() {
        let schema = SkeletonSchema::default();
        let cfg = MotionBranchConfig {
            n_mels: 16,
            ..MotionBranchConfig::desk()
        };
        let net = MotionNetwork::new(cfg, &schema, 5).unwrap();
        for t in [1, 12] {
            let bf = random3((1, t, 27), 1).index_axis_move(Axis(0), 0);
            let mel = random3((1, t, 16), 2).index_axis_move(Axis(0), 0);
            let m = motion_forward(&net, &bf, &mel, 30.0).unwrap();
            assert_eq!(m.data.dim(), (t, 75, 3));
            assert!(m.data.iter().all(|v| v.is_finite()));
        }
        let bf = random3((2, 5, 27), 3);
        let mel = random3((2, 5, 16), 4);
        let (a, _) = net.forward_in_order(&bf, &mel, &mut Mode::Eval, &[0, 1, 2, 3]).unwrap();
        let (b, _) = net.forward_in_order(&bf, &mel, &mut Mode::Eval, &[3, 1, 0, 2]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            net.forward(&random3((1, 5, 27), 0), &random3((1, 4, 16), 0), &mut Mode::Eval),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zeroing_a_branch_only_moves_its_joints() {
        let schema = tiny_schema();
        let mut net = MotionNetwork::new(tiny_config(), &schema, 2).unwrap();
        let bf = random3((1, 5, 27), 1);
        let mel = random3((1, 5, 16), 2);
        let (before, _) = net.forward(&bf, &mel, &mut Mode::Eval).unwrap();
        net.visit_mut("", &mut |name, p| {
            if name.starts_with("right_hand_arm.") {
                p.value.fill(0.0);
            }
        });
        let (after, _) = net.forward(&bf, &mel, &mut Mode::Eval).unwrap();
        for j in 0..6 {
            let a = before.slice(s![.., .., 3 * j..3 * j + 3]);
            let b = after.slice(s![.., .., 3 * j..3 * j + 3]);
            if schema.groups.right_hand_arm.contains(&j) {
                assert!(b.iter().all(|&v| v == 0.0));
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn single_branch_covers_every_joint() {
        let cfg = MotionBranchConfig {
            single_branch: true,
            single_branch_size: BranchSpec::new(2, 8),
            ..tiny_config()
        };
        let net = MotionNetwork::new(cfg, &tiny_schema(), 0).unwrap();
        assert_eq!(net.head_widths(), vec![18]);
        let full = MotionBranchConfig::default().single_branch_variant();
        assert!(full.single_branch);
        assert_eq!(full.single_branch_size, BranchSpec::new(2, 512));
    }

    #[test]
    fn loss_hand_examples() {
        let j = array![[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]];
        let jh = array![[[0.0, 0.0, 0.0], [0.0, 1.0, 1.0]]];
        assert_eq!(jp_loss(&j, &jh).unwrap(), 3.0);
        assert_eq!(jp_loss(&j, &j).unwrap(), 0.0);

        let j = array![[[0.0, 0.0, 0.0]], [[2.0, 0.0, 0.0]]];
        let jh = array![[[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]];
        assert_eq!(dis_loss(&j, &jh).unwrap(), 0.5);
        assert_eq!(dis_loss(&(&jh + 7.0), &jh).unwrap(), 0.0);
        assert!(matches!(
            dis_loss(&array![[[0.0, 0.0, 0.0]]], &array![[[0.0, 0.0, 0.0]]]),
            Err(Error::TooShort(_))
        ));

        let a = random3((6, 4, 3), 1);
        let b = random3((6, 4, 3), 2);
        assert_eq!(total_loss(&a, &b, 0.0).unwrap(), jp_loss(&a, &b).unwrap());
        let jp = jp_loss(&a, &b).unwrap();
        let dis = dis_loss(&a, &b).unwrap();
        assert!((total_loss(&a, &b, 0.3).unwrap() - (jp + 0.3 * dis)).abs() < 1e-12);
        assert!((3.0 + 0.3 * 0.5 - 3.15f64).abs() < 1e-12);
    }

    #[test]
    fn flat_loss_matches_public_losses() {
        let a = random3((7, 3, 3), 4);
        let b = random3((7, 3, 3), 5);
        let (l, _) = total_loss_flat_grad(flat(&a), flat(&b), 0.3);
        assert!((l - total_loss(&a, &b, 0.3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = MotionNetwork::new(tiny_config(), &tiny_schema(), 7).unwrap();
        let bf = random3((2, 5, 27), 1);
        let mel = random3((2, 5, 16), 2);
        let gt = random3((2, 5, 18), 3);
        let report = check_gradients(
            &mut net,
            |net, grad| {
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                let (pred, cache) = net.forward(&bf, &mel, &mut Mode::Train(&mut rng)).unwrap();
                let (loss, g) = batch_total_loss(&pred, &gt, 0.3).unwrap();
                if grad {
                    net.backward(&cache, &g);
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
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn losses_are_symmetric_and_translation_invariant(
            seed in 0u64..10_000, t in 2usize..8, c in -5.0f64..5.0,
        ) {
            let a = random3((t, 3, 3), seed);
            let b = random3((t, 3, 3), seed + 1);
            prop_assert!((jp_loss(&a, &b).unwrap() - jp_loss(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((dis_loss(&a, &b).unwrap() - dis_loss(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((dis_loss(&(&a + c), &b).unwrap() - dis_loss(&a, &b).unwrap()).abs() < 1e-9);
            prop_assert!((jp_loss(&(&a + c), &(&b + c)).unwrap() - jp_loss(&a, &b).unwrap()).abs() < 1e-9);
        }
    }
}
