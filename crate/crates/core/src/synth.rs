//! Deterministic synthetic corpus with a known label-to-feature and
//! label-to-motion mapping.
//!
//! Every piece is a random sequence of non-overlapping notes. Features live in
//! the same `T x F` space as log-Mel features and are built from fixed band
//! templates:
//!
//! | bins | content |
//! |---|---|
//! | 0..8 / 8..16 | down / up bow, scaled by a ramp over the note |
//! | 16..32 | string, one 4-bin band each |
//! | 32..52 | finger, one 4-bin band each |
//! | 52..100 | position, one 4-bin band each |
//! | 100..120 | one bin per (string, finger) pair |
//!
//! plus Gaussian noise with standard deviation `snr`. Motion is a rest pose
//! plus class-keyed static offsets on the body groups each stream drives,
//! plus a bowing oscillation on the z axis of the right arm and torso whose
//! sign follows the bow direction and whose phase restarts at every onset.
//! Light noise is added and the result is smoothed by three passes of a
//! 3-frame moving average. Silent frames sit at the rest pose.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_norm_stats, AlignedSample, MotionSequence, PreparedDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::labels::{self, Bow, Feature, LabelSequence, NoteEvent, ViolinString};
use crate::skeleton::{Branch, SkeletonSchema};

/// Feature bins used by the templates; `n_mels` must be at least this.
pub const TEMPLATE_BINS: usize = 120;
const BOW_BAND: usize = 8;
const STRING_BASE: usize = 16;
const FINGER_BASE: usize = 32;
const POSITION_BASE: usize = 52;
const PAIR_BASE: usize = 100;
const BAND: usize = 4;
/// Period of the bowing oscillation, seconds.
const BOW_PERIOD_S: f64 = 1.0;
const SMOOTHING_PASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_pieces: usize,
    pub val_pieces: usize,
    pub test_pieces: usize,
    pub piece_frames: usize,
    pub frame_rate: f64,
    pub n_mels: usize,
    pub seed: u64,
    /// Mean notes per second.
    pub note_rate: f64,
    /// Standard deviation of the feature noise, relative to the unit template
    /// amplitude. At the default of 1.0 the templates remain separable by a
    /// classifier, but the raw features no longer make the labels redundant
    /// as a motion-model input.
    pub snr: f64,
    /// Standard deviation of the motion noise applied before smoothing.
    pub motion_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pieces: 32,
            val_pieces: 4,
            test_pieces: 4,
            piece_frames: 300,
            frame_rate: 30.0,
            n_mels: 128,
            seed: 0,
            note_rate: 2.0,
            snr: 1.0,
            motion_noise: 0.001,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.piece_frames < 60 {
            return Err(Error::Config(format!("piece_frames {} < 60", self.piece_frames)));
        }
        if !(self.snr >= 0.0) || !(self.motion_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.n_mels < TEMPLATE_BINS {
            return Err(Error::Config(format!("n_mels {} < {TEMPLATE_BINS} template bins", self.n_mels)));
        }
        if !(self.note_rate > 0.0) || !(self.frame_rate > 0.0) {
            return Err(Error::Config("note_rate and frame_rate must be positive".into()));
        }
        if self.val_pieces + self.test_pieces >= self.n_pieces {
            return Err(Error::Config("no pieces left for training".into()));
        }
        Ok(())
    }

    pub fn train_pieces(&self) -> usize {
        self.n_pieces - self.val_pieces - self.test_pieces
    }

    /// Cache tag standing in for a Mel configuration hash.
    pub fn feature_hash(&self) -> String {
        format!("synthetic-{}", self.n_mels)
    }
}

/// Fixed label-to-motion mapping shared by every piece of a corpus.
#[derive(Debug, Clone)]
pub struct MotionMap {
    pub rest: Array2<f64>,
    /// Per stream, per non-silent class: `N x 3` offsets. Offsets never touch
    /// a coordinate that carries the bowing oscillation.
    pub offsets: [Vec<Array2<f64>>; 4],
    /// Bowing oscillation amplitude per joint (z only).
    pub bow_amplitude: Vec<f64>,
}

fn driven_branches(f: Feature) -> &'static [Branch] {
    match f {
        Feature::Bow => &[Branch::RightHandArm, Branch::Others],
        Feature::Str => &[Branch::RightHandArm, Branch::LeftArm, Branch::LeftHand],
        Feature::Fing => &[Branch::LeftHand],
        Feature::Pos => &[Branch::LeftHand, Branch::LeftArm],
    }
}

impl MotionMap {
    pub fn new(schema: &SkeletonSchema, rng: &mut ChaCha8Rng) -> Self {
        let n = schema.n_joints;
        let rest = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let mut bow_amplitude = vec![0.0; n];
        for &j in &schema.groups.right_hand_arm {
            bow_amplitude[j] = rng.random_range(0.05..0.15);
        }
        for &j in &schema.groups.others {
            bow_amplitude[j] = rng.random_range(0.01..0.03);
        }
        let normal = Normal::new(0.0, 0.15).expect("valid sigma");
        let offsets = Feature::ALL.map(|f| {
            let joints: Vec<usize> = driven_branches(f)
                .iter()
                .flat_map(|&b| schema.groups.get(b).iter().copied())
                .collect();
            (0..f.silence())
                .map(|_| {
                    let mut o = Array2::zeros((n, 3));
                    for &j in &joints {
                        o[[j, 0]] = normal.sample(rng);
                        o[[j, 1]] = normal.sample(rng);
                        // z is free wherever the bowing oscillation is absent.
                        if bow_amplitude[j] == 0.0 {
                            o[[j, 2]] = normal.sample(rng);
                        }
                    }
                    o
                })
                .collect()
        });
        MotionMap {
            rest,
            offsets,
            bow_amplitude,
        }
    }

    /// Static pose offset of a class tuple (`None` for silence).
    pub fn static_offset(&self, classes: Option<[usize; 4]>) -> Array2<f64> {
        let mut o = Array2::zeros(self.rest.raw_dim());
        if let Some(c) = classes {
            for (k, &class) in c.iter().enumerate() {
                o += &self.offsets[k][class];
            }
        }
        o
    }

    /// Smallest per-frame L1 distance between the static poses of two
    /// distinct class tuples (silence included). The bowing oscillation acts
    /// on coordinates the offsets leave alone, so it can only add to this gap.
    pub fn min_tuple_gap(&self) -> f64 {
        let mut poses: Vec<Vec<f64>> = vec![self.static_offset(None).iter().copied().collect()];
        for b in 0..2 {
            for s in 0..4 {
                for f in 0..5 {
                    for p in 0..12 {
                        poses.push(self.static_offset(Some([b, s, f, p])).iter().copied().collect());
                    }
                }
            }
        }
        let mut best = f64::INFINITY;
        for i in 0..poses.len() {
            for k in i + 1..poses.len() {
                let d: f64 = poses[i].iter().zip(&poses[k]).map(|(a, b)| (a - b).abs()).sum();
                best = best.min(d);
            }
        }
        best
    }
}

/// The generated corpus, its split and the mapping's separation margin.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub samples: Vec<AlignedSample>,
    pub split: SplitSpec,
    /// Minimum per-frame L1 gap between the poses of distinct label tuples.
    pub delta: f64,
}

impl SynthCorpus {
    /// Packages the corpus with normalization statistics from its training
    /// pieces.
    pub fn into_prepared(self) -> Result<PreparedDataset> {
        let train: Vec<AlignedSample> = self
            .samples
            .iter()
            .filter(|s| self.split.train.contains(&s.piece_id))
            .cloned()
            .collect();
        let stats = compute_norm_stats(&train)?;
        Ok(PreparedDataset {
            samples: self.samples,
            split: self.split,
            stats,
            mel_config_hash: self.config.feature_hash(),
            synthetic: true,
        })
    }
}

fn sample_events(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<NoteEvent> {
    let duration = cfg.piece_frames as f64 / cfg.frame_rate;
    let mean = 1.0 / cfg.note_rate;
    let strings = [ViolinString::E, ViolinString::A, ViolinString::D, ViolinString::G];
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut bow = if rng.random_bool(0.5) { Bow::Up } else { Bow::Down };
    while t < duration {
        if rng.random_bool(0.25) {
            t += rng.random_range(0.2..0.6);
        }
        let len = rng.random_range(0.5..1.5) * mean;
        let end = (t + len).min(duration);
        if end - t >= 2.0 / cfg.frame_rate {
            events.push(NoteEvent {
                onset_s: t,
                offset_s: end,
                bow,
                string: strings[rng.random_range(0..4)],
                finger: rng.random_range(1..=5),
                position: rng.random_range(1..=12),
            });
        }
        t = end;
        if rng.random_bool(0.85) {
            bow = if bow == Bow::Up { Bow::Down } else { Bow::Up };
        }
    }
    events
}

/// Index of the note sounding at each frame (frame-center rule).
fn note_per_frame(events: &[NoteEvent], rate: f64, t: usize) -> Vec<Option<usize>> {
    (0..t)
        .map(|k| {
            let c = (k as f64 + 0.5) / rate;
            events.iter().position(|e| e.onset_s <= c && c < e.offset_s)
        })
        .collect()
}

fn synth_features(
    cfg: &SynthConfig,
    labels: &LabelSequence,
    events: &[NoteEvent],
    notes: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let t = labels.len();
    let mut x = Array2::zeros((t, cfg.n_mels));
    for k in 0..t {
        let Some(n) = notes[k] else { continue };
        let e = &events[n];
        let c = (k as f64 + 0.5) / cfg.frame_rate;
        let ramp = ((c - e.onset_s) / (e.offset_s - e.onset_s)).clamp(0.0, 1.0);
        let [b, s, f, p] = [labels.bow[k], labels.str[k], labels.fing[k], labels.pos[k]];
        let bow_start = if b == Bow::Down as usize { 0 } else { BOW_BAND };
        let mut row = x.row_mut(k);
        for v in row.slice_mut(ndarray::s![bow_start..bow_start + BOW_BAND]).iter_mut() {
            *v = 0.5 + 0.5 * ramp;
        }
        let mut band = |start: usize| {
            for v in row.slice_mut(ndarray::s![start..start + BAND]).iter_mut() {
                *v = 1.0;
            }
        };
        band(STRING_BASE + BAND * s);
        band(FINGER_BASE + BAND * f);
        band(POSITION_BASE + BAND * p);
        row[PAIR_BASE + 5 * s + f] = 1.0;
    }
    if cfg.snr > 0.0 {
        let normal = Normal::new(0.0, cfg.snr).expect("valid sigma");
        x.mapv_inplace(|v| v + normal.sample(rng));
    }
    x
}

/// Three passes of a centered 3-frame moving average with edge replication.
pub fn smooth(motion: &Array3<f64>, passes: usize) -> Array3<f64> {
    let mut cur = motion.clone();
    let t = cur.dim().0;
    if t < 2 {
        return cur;
    }
    for _ in 0..passes {
        let prev = cur.clone();
        for k in 0..t {
            let a = prev.index_axis(Axis(0), k.saturating_sub(1));
            let b = prev.index_axis(Axis(0), k);
            let c = prev.index_axis(Axis(0), (k + 1).min(t - 1));
            cur.index_axis_mut(Axis(0), k).assign(&((&a + &b + &c) / 3.0));
        }
    }
    cur
}

fn synth_motion(
    cfg: &SynthConfig,
    map: &MotionMap,
    labels: &LabelSequence,
    events: &[NoteEvent],
    notes: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let t = labels.len();
    let n = map.rest.nrows();
    let mut m = Array3::zeros((t, n, 3));
    let normal = (cfg.motion_noise > 0.0).then(|| Normal::new(0.0, cfg.motion_noise).expect("valid sigma"));
    for k in 0..t {
        let mut pose = map.rest.clone();
        if let Some(idx) = notes[k] {
            let e = &events[idx];
            let classes = [labels.bow[k], labels.str[k], labels.fing[k], labels.pos[k]];
            pose += &map.static_offset(Some(classes));
            let tau = (k as f64 + 0.5) / cfg.frame_rate - e.onset_s;
            let sign = if classes[0] == Bow::Down as usize { 1.0 } else { -1.0 };
            let wave = sign * (2.0 * std::f64::consts::PI * tau / BOW_PERIOD_S).sin();
            for (j, &a) in map.bow_amplitude.iter().enumerate() {
                pose[[j, 2]] += a * wave;
            }
        }
        if let Some(normal) = &normal {
            pose.mapv_inplace(|v| v + normal.sample(rng));
        }
        m.index_axis_mut(Axis(0), k).assign(&pose);
    }
    smooth(&m, SMOOTHING_PASSES)
}

/// Generates the corpus. Identical configs yield identical corpora.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    generate_corpus_with_schema(cfg, &SkeletonSchema::default())
}

pub fn generate_corpus_with_schema(cfg: &SynthConfig, schema: &SkeletonSchema) -> Result<SynthCorpus> {
    cfg.validate()?;
    schema.validate()?;
    let mut map_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = MotionMap::new(schema, &mut map_rng);
    let mut samples = Vec::with_capacity(cfg.n_pieces);
    for i in 0..cfg.n_pieces {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let events = sample_events(cfg, &mut rng);
        let labels = labels::events_to_frames(&events, cfg.frame_rate, cfg.piece_frames);
        let notes = note_per_frame(&events, cfg.frame_rate, cfg.piece_frames);
        let feats = synth_features(cfg, &labels, &events, &notes, &mut rng);
        let motion = synth_motion(cfg, &map, &labels, &events, &notes, &mut rng);
        samples.push(AlignedSample::new(
            format!("synth_{i:03}"),
            "synth",
            feats,
            labels,
            MotionSequence::new(motion, cfg.frame_rate),
            cfg.frame_rate,
        )?);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.piece_id.clone()).collect();
    let n_train = cfg.train_pieces();
    let split = SplitSpec {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + cfg.val_pieces].to_vec(),
        test: ids[n_train + cfg.val_pieces..].to_vec(),
        held_out_performer: None,
    };
    Ok(SynthCorpus {
        config: cfg.clone(),
        samples,
        split,
        delta: map.min_tuple_gap(),
    })
}

/// Noise-free band template for a class tuple, for nearest-template decoding.
pub fn template(n_mels: usize, classes: [usize; 4], ramp: f64) -> Vec<f64> {
    let mut row = vec![0.0; n_mels];
    let [b, s, f, p] = classes;
    let bow_start = if b == Bow::Down as usize { 0 } else { BOW_BAND };
    row[bow_start..bow_start + BOW_BAND].fill(0.5 + 0.5 * ramp);
    row[STRING_BASE + BAND * s..STRING_BASE + BAND * (s + 1)].fill(1.0);
    row[FINGER_BASE + BAND * f..FINGER_BASE + BAND * (f + 1)].fill(1.0);
    row[POSITION_BASE + BAND * p..POSITION_BASE + BAND * (p + 1)].fill(1.0);
    row[PAIR_BASE + 5 * s + f] = 1.0;
    row
}
