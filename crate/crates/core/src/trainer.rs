//! Training loops, validation-driven model selection, ablations and
//! checkpoints.
//!
//! A run trains one network: one of the four label classifiers or the motion
//! generator. Every epoch shuffles fixed-length clips, takes Adam steps on
//! mini-batches, then scores whole validation pieces in evaluation mode. The
//! parameters with the lowest validation loss are kept, and training stops
//! after `patience` epochs without improvement. Epoch 0 is the validation
//! loss of the freshly initialized model.

use std::io::Write;

use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bf_model::{self, BfBranchConfig, BfNetwork};
use crate::checkpoint::Checkpoint;
use crate::dataset::{AlignedSample, NormalizationStats, PreparedDataset};
use crate::error::{Error, Result};
use crate::labels::{self, Feature};
use crate::motion_model::{self, MotionBranchConfig, MotionNetwork, DEFAULT_LAMBDA};
use crate::nn::{Adam, AdamConfig, Mode, Parameterized};
use crate::skeleton::SkeletonSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    BfBow,
    BfStr,
    BfFing,
    BfPos,
    Motion,
}

impl Target {
    pub const BF: [Target; 4] = [Target::BfBow, Target::BfStr, Target::BfFing, Target::BfPos];

    pub fn feature(self) -> Option<Feature> {
        match self {
            Target::BfBow => Some(Feature::Bow),
            Target::BfStr => Some(Feature::Str),
            Target::BfFing => Some(Feature::Fing),
            Target::BfPos => Some(Feature::Pos),
            Target::Motion => None,
        }
    }

    pub fn from_feature(f: Feature) -> Self {
        match f {
            Feature::Bow => Target::BfBow,
            Feature::Str => Target::BfStr,
            Feature::Fing => Target::BfFing,
            Feature::Pos => Target::BfPos,
        }
    }

    /// Accepts `bow`, `str`, `fing`, `pos`, `motion` and the `bf_` forms.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.strip_prefix("bf_").unwrap_or(s);
        if s == "motion" {
            return Some(Target::Motion);
        }
        Feature::parse(s).map(Target::from_feature)
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::BfBow => "bf_bow",
            Target::BfStr => "bf_str",
            Target::BfFing => "bf_fing",
            Target::BfPos => "bf_pos",
            Target::Motion => "motion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoBow,
    NoStr,
    NoFing,
    NoPos,
    SingleBranch,
    NoDis,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::NoBow,
        Ablation::NoStr,
        Ablation::NoFing,
        Ablation::NoPos,
        Ablation::SingleBranch,
        Ablation::NoDis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoBow => "no_bow",
            Ablation::NoStr => "no_str",
            Ablation::NoFing => "no_fing",
            Ablation::NoPos => "no_pos",
            Ablation::SingleBranch => "single_branch",
            Ablation::NoDis => "no_dis",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidVariant(format!("unknown variant `{s}`")))
    }

    /// The label stream this variant removes from the motion input, if any.
    pub fn dropped_feature(self) -> Option<Feature> {
        match self {
            Ablation::NoBow => Some(Feature::Bow),
            Ablation::NoStr => Some(Feature::Str),
            Ablation::NoFing => Some(Feature::Fing),
            Ablation::NoPos => Some(Feature::Pos),
            _ => None,
        }
    }
}

/// Which labels feed the motion generator during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfSource {
    /// Ground-truth annotations (teacher forcing).
    #[default]
    Gt,
    /// Labels decoded by trained classifiers; the caller substitutes them
    /// into the samples before training.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub target: Target,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// Frames per training clip.
    pub clip_length: usize,
    /// Frames between clip starts.
    pub clip_hop: usize,
    pub seed: u64,
    pub lambda: f64,
    pub ablation: Ablation,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub bf_source: BfSource,
}

impl TrainConfig {
    pub fn for_target(target: Target) -> Self {
        TrainConfig {
            target,
            batch_size: if target == Target::Motion { 32 } else { 8 },
            optimizer: AdamConfig::default(),
            max_epochs: 100,
            patience: 10,
            clip_length: 300,
            clip_hop: 300,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            ablation: Ablation::None,
            clip_norm: Some(5.0),
            bf_source: BfSource::Gt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.clip_length < 2 || self.clip_hop == 0 {
            return Err(Error::Config("clip_length must be at least 2 and clip_hop positive".into()));
        }
        if self.patience == 0 || (self.max_epochs > 0 && self.patience > self.max_epochs) {
            return Err(Error::Config(format!(
                "patience {} must lie in 1..=max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.target != Target::Motion && self.ablation != Ablation::None {
            return Err(Error::InvalidVariant(format!(
                "variant `{}` applies to the motion target only",
                self.ablation.name()
            )));
        }
        Ok(())
    }

    /// Displacement weight actually used (zero for the `no_dis` variant).
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation == Ablation::NoDis {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn dropped_features(&self) -> Vec<Feature> {
        self.ablation.dropped_feature().into_iter().collect()
    }
}

/// Network shapes shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Template for the classifiers; `n_classes` is set per target.
    pub bf: BfBranchConfig,
    pub motion: MotionBranchConfig,
    #[serde(default)]
    pub schema: SkeletonSchema,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            bf: BfBranchConfig::for_feature(Feature::Bow),
            motion: MotionBranchConfig::default(),
            schema: SkeletonSchema::default(),
        }
    }
}

impl Architecture {
    /// Narrow presets with the same layer structure, for CPU-only runs.
    pub fn desk() -> Self {
        Architecture {
            bf: BfBranchConfig::desk(Feature::Bow),
            motion: MotionBranchConfig::desk(),
            schema: SkeletonSchema::default(),
        }
    }

    pub fn with_n_mels(mut self, n_mels: usize) -> Self {
        self.bf.n_mels = n_mels;
        self.motion.n_mels = n_mels;
        self
    }

    pub fn bf_config(&self, feature: Feature) -> BfBranchConfig {
        BfBranchConfig {
            n_classes: feature.n_classes(),
            ..self.bf.clone()
        }
    }

    /// Motion configuration with the run's ablation applied.
    pub fn motion_config(&self, config: &TrainConfig) -> MotionBranchConfig {
        let mut m = self.motion.clone();
        m.bf_width = labels::bf_width_without(&config.dropped_features());
        if config.ablation == Ablation::SingleBranch {
            m.single_branch = true;
        }
        m
    }
}

/// A trained or freshly built network.
#[derive(Debug, Clone)]
pub enum Model {
    Bf { feature: Feature, net: BfNetwork },
    Motion(MotionNetwork),
}

impl Model {
    pub fn build(config: &TrainConfig, arch: &Architecture, seed: u64) -> Result<Self> {
        match config.target.feature() {
            Some(feature) => Ok(Model::Bf {
                feature,
                net: BfNetwork::new(arch.bf_config(feature), seed)?,
            }),
            None => Ok(Model::Motion(MotionNetwork::new(
                arch.motion_config(config),
                &arch.schema,
                seed,
            )?)),
        }
    }

    pub fn params(&self) -> &dyn Parameterized {
        match self {
            Model::Bf { net, .. } => net,
            Model::Motion(net) => net,
        }
    }

    pub fn params_mut(&mut self) -> &mut dyn Parameterized {
        match self {
            Model::Bf { net, .. } => net,
            Model::Motion(net) => net,
        }
    }
}

/// One piece, preprocessed for training.
#[derive(Debug, Clone)]
pub struct PreparedPiece {
    pub piece_id: String,
    /// Normalized features `T x F`.
    pub mel: Array2<f64>,
    /// Label input of the motion network `T x W`.
    pub bf: Array2<f64>,
    /// Target of the classifier, one-hot `T x n` (empty for motion runs).
    pub target: Array2<f64>,
    /// Normalized flat motion `T x 3N` (empty for classifier runs).
    pub motion: Array2<f64>,
}

impl PreparedPiece {
    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }
}

pub fn prepare_piece(sample: &AlignedSample, stats: &NormalizationStats, config: &TrainConfig) -> Result<PreparedPiece> {
    let mel = stats.normalize_features(&sample.mel)?;
    let (bf, target, motion) = match config.target.feature() {
        Some(f) => (Array2::zeros((0, 0)), sample.labels.one_hot(f), Array2::zeros((0, 0))),
        None => (
            labels::concat_bf_without(&sample.labels, &config.dropped_features())?,
            Array2::zeros((0, 0)),
            stats.normalize_motion(&sample.motion.flat())?,
        ),
    };
    Ok(PreparedPiece {
        piece_id: sample.piece_id.clone(),
        mel,
        bf,
        target,
        motion,
    })
}

/// Train and validation pieces with the statistics used to normalize them.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Vec<AlignedSample>,
    pub val: Vec<AlignedSample>,
    pub stats: NormalizationStats,
    /// Hash of the feature extraction settings the samples were built with.
    pub feature_hash: String,
}

impl TrainingData {
    pub fn from_prepared(ds: &PreparedDataset) -> Result<Self> {
        let (train, val, _) = ds.splits()?;
        Ok(TrainingData {
            train,
            val,
            stats: ds.stats.clone(),
            feature_hash: ds.mel_config_hash.clone(),
        })
    }
}

/// A training window: piece index, first frame, length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clip {
    pub piece: usize,
    pub start: usize,
    pub len: usize,
}

/// Sliding windows of `clip_length` frames every `hop` frames. Tails shorter
/// than a full clip are dropped.
pub fn make_clips(frames: &[usize], clip_length: usize, hop: usize) -> Vec<Clip> {
    let mut clips = Vec::new();
    for (piece, &t) in frames.iter().enumerate() {
        let mut start = 0;
        while start + clip_length <= t {
            clips.push(Clip {
                piece,
                start,
                len: clip_length,
            });
            start += hop;
        }
    }
    clips
}

fn stack(pieces: &[PreparedPiece], clips: &[Clip], pick: impl Fn(&PreparedPiece) -> &Array2<f64>) -> Array3<f64> {
    let len = clips[0].len;
    let width = pick(&pieces[clips[0].piece]).ncols();
    let mut out = Array3::zeros((clips.len(), len, width));
    for (mut dst, c) in out.outer_iter_mut().zip(clips) {
        dst.assign(&pick(&pieces[c.piece]).slice(s![c.start..c.start + c.len, ..]));
    }
    out
}

fn whole(piece: &PreparedPiece, pick: impl Fn(&PreparedPiece) -> &Array2<f64>) -> Array3<f64> {
    pick(piece).view().insert_axis(Axis(0)).to_owned()
}

/// Loss of one whole piece in evaluation mode.
fn piece_loss(model: &Model, piece: &PreparedPiece, lambda: f64) -> Result<f64> {
    match model {
        Model::Bf { net, .. } => {
            let p = bf_model::bf_forward(net, &piece.mel)?;
            bf_model::ce_loss(&p, &piece.target)
        }
        Model::Motion(net) => {
            let (pred, _) = net.forward(&whole(piece, |p| &p.bf), &whole(piece, |p| &p.mel), &mut Mode::Eval)?;
            let (loss, _) = motion_model::batch_total_loss(&pred, &whole(piece, |p| &p.motion), lambda)?;
            Ok(loss)
        }
    }
}

/// Mean per-piece evaluation-mode loss.
pub fn validation_loss(model: &Model, pieces: &[PreparedPiece], lambda: f64) -> Result<f64> {
    if pieces.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let losses: Vec<f64> = pieces
        .par_iter()
        .map(|p| piece_loss(model, p, lambda))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    pieces: &[PreparedPiece],
    batch: &[Clip],
    lambda: f64,
    adam: &mut Adam,
    clip_norm: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    model.params_mut().zero_grad();
    let loss = match model {
        Model::Bf { net, .. } => {
            let x = stack(pieces, batch, |p| &p.mel);
            let y = stack(pieces, batch, |p| &p.target);
            let (probs, cache) = net.forward_batch(&x, &mut Mode::Train(rng))?;
            let (loss, dlogits) = bf_model::batch_ce(&probs, &y)?;
            net.backward(&cache, &dlogits);
            net.update_batch_stats(&cache);
            loss
        }
        Model::Motion(net) => {
            let bf = stack(pieces, batch, |p| &p.bf);
            let mel = stack(pieces, batch, |p| &p.mel);
            let gt = stack(pieces, batch, |p| &p.motion);
            let (pred, cache) = net.forward(&bf, &mel, &mut Mode::Train(rng))?;
            let (loss, grad) = motion_model::batch_total_loss(&pred, &gt, lambda)?;
            net.backward(&cache, &grad);
            loss
        }
    };
    if !loss.is_finite() {
        return Ok(loss);
    }
    if let Some(max) = clip_norm {
        Adam::clip_grad_norm(model.params_mut(), max);
    }
    adam.step(model.params_mut());
    Ok(loss)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// `None` for epoch 0, which only scores the initial model.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Trains one network and returns the best checkpoint by validation loss.
/// When `log` is given, one JSON object per epoch is written to it.
pub fn train(
    config: &TrainConfig,
    arch: &Architecture,
    data: &TrainingData,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if data.val.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let prep = |s: &[AlignedSample]| -> Result<Vec<PreparedPiece>> {
        s.iter().map(|x| prepare_piece(x, &data.stats, config)).collect()
    };
    let train_pieces = prep(&data.train)?;
    let val_pieces = prep(&data.val)?;
    let frames: Vec<usize> = train_pieces.iter().map(PreparedPiece::frames).collect();
    let mut clips = make_clips(&frames, config.clip_length, config.clip_hop);
    if clips.is_empty() && config.max_epochs > 0 {
        return Err(Error::EmptySplit(format!(
            "no training piece reaches the clip length of {} frames",
            config.clip_length
        )));
    }

    let lambda = config.effective_lambda();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::build(config, arch, config.seed)?;
    let mut adam = Adam::new(config.optimizer);
    let mut history = Vec::new();
    let mut emit = |entry: EpochLog, history: &mut Vec<EpochLog>| -> Result<()> {
        log::info!(
            "{} epoch {}: train {:?} val {:.6}",
            config.target.name(),
            entry.epoch,
            entry.train_loss,
            entry.val_loss
        );
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        history.push(entry);
        Ok(())
    };

    let initial = validation_loss(&model, &val_pieces, lambda)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss: initial });
    }
    emit(
        EpochLog {
            epoch: 0,
            train_loss: None,
            val_loss: initial,
        },
        &mut history,
    )?;
    let mut best = (model.clone(), 0usize, initial, rng.get_word_pos());
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        clips.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in clips.chunks(config.batch_size) {
            let loss = train_step(&mut model, &train_pieces, batch, lambda, &mut adam, config.clip_norm, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * batch.len() as f64;
        }
        let train_loss = total / clips.len() as f64;
        let val_loss = validation_loss(&model, &val_pieces, lambda)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        emit(
            EpochLog {
                epoch,
                train_loss: Some(train_loss),
                val_loss,
            },
            &mut history,
        )?;
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss, rng.get_word_pos());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
    }
    let (model, epoch, best_val_loss, word_pos) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            train_config: config.clone(),
            epoch,
            best_val_loss,
            rng_seed: config.seed,
            rng_word_pos: word_pos,
            feature_hash: data.feature_hash.clone(),
            stats_hash: data.stats.hash(),
            schema: (config.target == Target::Motion).then(|| arch.schema.clone()),
        },
        history,
    })
}

/// Trains the motion model under an ablation variant.
pub fn run_ablation(
    base: &TrainConfig,
    variant: Ablation,
    arch: &Architecture,
    data: &TrainingData,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if base.target != Target::Motion && variant != Ablation::None {
        return Err(Error::InvalidVariant(format!(
            "variant `{}` applies to the motion target only, not {}",
            variant.name(),
            base.target.name()
        )));
    }
    let config = TrainConfig {
        ablation: variant,
        lambda: if variant == Ablation::NoDis { 0.0 } else { base.lambda },
        ..base.clone()
    };
    train(&config, arch, data, log)
}

/// Validation loss of a checkpoint's model on the given pieces.
pub fn checkpoint_validation_loss(ckpt: &Checkpoint, data: &TrainingData) -> Result<f64> {
    let pieces: Vec<PreparedPiece> = data
        .val
        .iter()
        .map(|s| prepare_piece(s, &data.stats, &ckpt.train_config))
        .collect::<Result<_>>()?;
    validation_loss(&ckpt.model, &pieces, ckpt.train_config.effective_lambda())
}

/// Frame accuracy of a classifier on whole pieces.
pub fn bf_accuracy(net: &BfNetwork, feature: Feature, samples: &[AlignedSample], stats: &NormalizationStats) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in samples {
        let p = bf_model::bf_forward(net, &stats.normalize_features(&s.mel)?)?;
        let pred = bf_model::decode_classes(&p);
        hits += pred.iter().zip(s.labels.stream(feature)).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    if total == 0 {
        return Err(Error::EmptySplit("no frames to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthConfig};

    #[test]
    fn clip_counts() {
        assert_eq!(make_clips(&[300], 100, 100).len(), 3);
        assert_eq!(make_clips(&[299], 100, 100).len(), 2);
        assert_eq!(make_clips(&[300], 100, 50).len(), 5);
        assert_eq!(make_clips(&[50, 300], 100, 100)[0].piece, 1);
    }

    #[test]
    fn target_and_variant_names() {
        assert_eq!(Target::parse("str"), Some(Target::BfStr));
        assert_eq!(Target::parse("bf_pos"), Some(Target::BfPos));
        assert_eq!(Target::parse("motion"), Some(Target::Motion));
        assert_eq!(Target::parse("bogus"), None);
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
        }
        assert!(matches!(Ablation::parse("no_x"), Err(Error::InvalidVariant(_))));
        assert_eq!(TrainConfig::for_target(Target::BfBow).batch_size, 8);
        assert_eq!(TrainConfig::for_target(Target::Motion).batch_size, 32);
    }

    #[test]
    fn ablation_shapes() {
        let arch = Architecture::desk();
        let mut cfg = TrainConfig::for_target(Target::Motion);
        cfg.ablation = Ablation::NoStr;
        assert_eq!(arch.motion_config(&cfg).bf_width, 22);
        cfg.ablation = Ablation::NoDis;
        assert_eq!(cfg.effective_lambda(), 0.0);
        cfg.ablation = Ablation::SingleBranch;
        assert!(arch.motion_config(&cfg).single_branch);
        let bf = TrainConfig::for_target(Target::BfStr);
        let data = tiny_data();
        assert!(matches!(
            run_ablation(&bf, Ablation::NoStr, &arch, &data, None),
            Err(Error::InvalidVariant(_))
        ));
    }

    fn tiny_data() -> TrainingData {
        let corpus = generate_corpus(&SynthConfig {
            n_pieces: 3,
            val_pieces: 1,
            test_pieces: 0,
            piece_frames: 60,
            ..SynthConfig::default()
        })
        .unwrap();
        TrainingData::from_prepared(&corpus.into_prepared().unwrap()).unwrap()
    }

    fn tiny_arch() -> Architecture {
        let mut a = Architecture::desk();
        a.bf.conv_channels = vec![2, 2, 2];
        a.bf.rnn_hidden = 4;
        a.bf.fc_hidden = 8;
        a
    }

    #[test]
    fn zero_epochs_scores_the_initial_model() {
        let data = tiny_data();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::for_target(Target::BfBow)
        };
        let out = train(&cfg, &tiny_arch(), &data, None).unwrap();
        assert_eq!(out.checkpoint.epoch, 0);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].train_loss, None);
        let fresh = Model::build(&cfg, &tiny_arch(), cfg.seed).unwrap();
        assert_eq!(fresh.params().checksum(), out.checkpoint.model.params().checksum());
    }

    #[test]
    fn empty_splits_are_rejected() {
        let mut data = tiny_data();
        data.val.clear();
        let cfg = TrainConfig::for_target(Target::BfBow);
        assert!(matches!(train(&cfg, &tiny_arch(), &data, None), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let data = tiny_data();
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 2,
            clip_length: 30,
            clip_hop: 30,
            ..TrainConfig::for_target(Target::BfStr)
        };
        let mut log = Vec::new();
        let a = train(&cfg, &tiny_arch(), &data, Some(&mut log)).unwrap();
        let b = train(&cfg, &tiny_arch(), &data, None).unwrap();
        assert_eq!(a.checkpoint.best_val_loss.to_bits(), b.checkpoint.best_val_loss.to_bits());
        assert_eq!(a.checkpoint.model.params().checksum(), b.checkpoint.model.params().checksum());
        let text = String::from_utf8(log).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"train_loss\":null"));
        let parsed: EpochLog = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(parsed.epoch, 2);
        // The kept checkpoint is never worse than any logged epoch.
        let min = a.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.checkpoint.best_val_loss, min);
    }
}
