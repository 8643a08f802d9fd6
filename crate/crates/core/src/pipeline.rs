//! End-to-end operations over files on disk: corpus preparation, training,
//! inference, evaluation and synthetic corpus export. The command-line tool
//! is a thin wrapper around these functions.
//!
//! On-disk layout of a raw corpus, one directory per piece:
//!
//! ```text
//! corpus/<piece>/audio.wav
//! corpus/<piece>/motion.csv        (+ motion.json sidecar)
//! corpus/<piece>/annotation.json
//! ```
//!
//! A prepared dataset holds `samples/<piece>/{features.bin, features.json,
//! labels.json, motion.csv, motion.json}`, `split.json` and `stats.json`.
//! A training run directory holds `<name>.ckpt`, `<name>.log.jsonl` and the
//! `stats.json` the checkpoints were trained with.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio::{self, MelConfig};
use crate::bf_model::{self, BfBranchConfig, BfProbabilities};
use crate::checkpoint::Checkpoint;
use crate::dataset::{
    self, AlignedSample, FeatureMeta, MotionMeta, MotionSequence, NormalizationStats, PreparedDataset, SplitSpec,
};
use crate::error::{Error, Result};
use crate::labels::{self, Annotation, Feature, LabelSequence};
use crate::metrics::{self, MetricReport};
use crate::motion_model::{self, MotionBranchConfig, DEFAULT_LAMBDA};
use crate::nn::AdamConfig;
use crate::skeleton::SkeletonSchema;
use crate::synth::{self, SynthConfig};
use crate::trainer::{self, Ablation, Architecture, BfSource, Target, TrainConfig, TrainOutcome, TrainingData};

/// Optimization settings shared by all runs of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_length: usize,
    pub clip_hop: usize,
    pub optimizer: AdamConfig,
    pub lambda: f64,
    pub clip_norm: Option<f64>,
    pub bf_batch_size: usize,
    pub motion_batch_size: usize,
    pub bf_source: BfSource,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            max_epochs: 100,
            patience: 10,
            clip_length: 300,
            clip_hop: 300,
            optimizer: AdamConfig::default(),
            lambda: DEFAULT_LAMBDA,
            clip_norm: Some(5.0),
            bf_batch_size: 8,
            motion_batch_size: 32,
            bf_source: BfSource::Gt,
        }
    }
}

/// Everything an experiment needs, loaded from one JSON file. Relative
/// paths are resolved against the directory of that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mel: MelConfig,
    /// Classifier shape; `n_classes` is set per target.
    pub bf: BfBranchConfig,
    pub motion: MotionBranchConfig,
    pub train: TrainSettings,
    /// Joint layout file; the built-in 75-joint layout when absent.
    pub schema: Option<PathBuf>,
    /// Split file; a deterministic split by sorted piece id when absent.
    pub split: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mel: MelConfig::default(),
            bf: BfBranchConfig::for_feature(Feature::Bow),
            motion: MotionBranchConfig::default(),
            train: TrainSettings::default(),
            schema: None,
            split: None,
        }
    }
}

impl ExperimentConfig {
    /// Narrow networks and short clips that train on a CPU in minutes.
    pub fn desk() -> Self {
        ExperimentConfig {
            bf: BfBranchConfig::desk(Feature::Bow),
            motion: MotionBranchConfig::desk(),
            train: TrainSettings {
                max_epochs: 30,
                patience: 10,
                clip_length: 60,
                clip_hop: 30,
                bf_batch_size: 8,
                motion_batch_size: 8,
                ..TrainSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.schema, &mut cfg.split].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.bf.n_mels != self.motion.n_mels {
            return Err(Error::Config(format!(
                "classifier expects {} feature bins, motion model {}",
                self.bf.n_mels, self.motion.n_mels
            )));
        }
        self.bf.validate()?;
        self.motion.validate()?;
        self.train_config(Target::Motion, 0).validate()
    }

    pub fn skeleton(&self) -> Result<SkeletonSchema> {
        match &self.schema {
            Some(p) => SkeletonSchema::load(p),
            None => Ok(SkeletonSchema::default()),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(Architecture {
            bf: self.bf.clone(),
            motion: self.motion.clone(),
            schema: self.skeleton()?,
        })
    }

    pub fn train_config(&self, target: Target, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            target,
            batch_size: if target == Target::Motion {
                t.motion_batch_size
            } else {
                t.bf_batch_size
            },
            optimizer: t.optimizer,
            max_epochs: t.max_epochs,
            patience: t.patience,
            clip_length: t.clip_length,
            clip_hop: t.clip_hop,
            seed,
            lambda: t.lambda,
            ablation: Ablation::None,
            clip_norm: t.clip_norm,
            bf_source: t.bf_source,
        }
    }
}

/// Deterministic split by sorted piece id: the last tenth (at least one
/// piece once there are three or more) goes to test, the tenth before it to
/// validation, the rest to training.
pub fn default_split(piece_ids: &[String]) -> SplitSpec {
    let mut ids = piece_ids.to_vec();
    ids.sort();
    let n = ids.len();
    let k = if n >= 3 { (n / 10).max(1) } else { 0 };
    let val_k = if n >= 2 { (n / 10).max(1) } else { 0 };
    let test = ids.split_off(n - k);
    let val = ids.split_off(ids.len() - val_k);
    SplitSpec {
        train: ids,
        val,
        test,
        held_out_performer: None,
    }
}

fn render_failures(failures: &[(String, String, String)]) -> String {
    let pw = failures.iter().map(|f| f.0.len()).chain([5]).max().unwrap_or(5);
    let fw = failures.iter().map(|f| f.1.len()).chain([4]).max().unwrap_or(4);
    let mut out = format!("{:<pw$}  {:<fw$}  error\n", "piece", "file");
    for (piece, file, err) in failures {
        out.push_str(&format!("{piece:<pw$}  {file:<fw$}  {err}\n"));
    }
    out
}

fn load_piece(dir: &Path, cfg: &ExperimentConfig, n_joints: usize) -> std::result::Result<AlignedSample, (String, String)> {
    let files = ["audio.wav", "motion.csv", "annotation.json"].map(|f| dir.join(f));
    for f in &files {
        if !f.is_file() {
            return Err((f.display().to_string(), "file is missing".into()));
        }
    }
    let rec = dataset::load_recording(&files[0], &files[1], &files[2], n_joints, cfg.mel.sample_rate)
        .map_err(|e| {
            let file = match &e {
                Error::MalformedFile { path, .. } | Error::Io { path, .. } => path.display().to_string(),
                Error::Schema(_) | Error::Overlap { .. } | Error::Range(_) => files[2].display().to_string(),
                _ => dir.display().to_string(),
            };
            (file, e.to_string())
        })?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if rec.piece_id != name {
        return Err((
            files[2].display().to_string(),
            format!("annotation names piece `{}`, directory is `{name}`", rec.piece_id),
        ));
    }
    dataset::align(&rec, cfg.mel.frame_rate(), &cfg.mel).map_err(|e| (dir.display().to_string(), e.to_string()))
}

/// Loads, aligns and caches every piece of a raw corpus; statistics come
/// from the training split. Any failing piece aborts with a table naming
/// each failing piece and file.
pub fn prepare(corpus: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<PreparedDataset> {
    cfg.validate()?;
    let schema = cfg.skeleton()?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(corpus)
        .map_err(|e| Error::io(corpus, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Missing(format!("no piece directories in {}", corpus.display())));
    }
    let results: Vec<_> = dirs.par_iter().map(|d| load_piece(d, cfg, schema.n_joints)).collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (dir, r) in dirs.iter().zip(results) {
        match r {
            Ok(s) => samples.push(s),
            Err((file, err)) => {
                let piece = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                failures.push((piece, file, err));
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::Corpus {
            count: failures.len(),
            table: render_failures(&failures),
        });
    }
    let split = match &cfg.split {
        Some(p) => SplitSpec::load(p)?,
        None => default_split(&samples.iter().map(|s| s.piece_id.clone()).collect::<Vec<_>>()),
    };
    let (train, _, _) = dataset::split_dataset(samples.clone(), &split)?;
    let stats = dataset::compute_norm_stats(&train)?;
    let ds = PreparedDataset {
        samples,
        split,
        stats,
        mel_config_hash: cfg.mel.hash(),
        synthetic: false,
    };
    ds.write(out)?;
    Ok(ds)
}

/// Refuses a dataset whose features were not produced by the configured
/// front-end (synthetic corpora only need matching widths).
pub fn check_dataset(ds: &PreparedDataset, cfg: &ExperimentConfig) -> Result<()> {
    if !ds.synthetic && ds.mel_config_hash != cfg.mel.hash() {
        return Err(Error::Incompatible(format!(
            "dataset features were extracted with config {}, experiment uses {}",
            ds.mel_config_hash,
            cfg.mel.hash()
        )));
    }
    if let Some(s) = ds.samples.first() {
        if s.mel.ncols() != cfg.bf.n_mels {
            return Err(Error::Incompatible(format!(
                "dataset has {} feature bins, networks expect {}",
                s.mel.ncols(),
                cfg.bf.n_mels
            )));
        }
    }
    Ok(())
}

/// The four trained classifiers, in bow/string/finger/position order.
#[derive(Debug, Clone)]
pub struct BfEnsemble {
    checkpoints: Vec<Checkpoint>,
}

impl BfEnsemble {
    /// Accepts the four classifier checkpoints in any order.
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self> {
        let mut slots: [Option<Checkpoint>; 4] = Default::default();
        for ck in checkpoints {
            let feature = ck
                .train_config
                .target
                .feature()
                .ok_or_else(|| Error::Incompatible("a motion checkpoint was given as a classifier".into()))?;
            let slot = &mut slots[Feature::ALL.iter().position(|&f| f == feature).expect("feature listed")];
            if slot.is_some() {
                return Err(Error::Incompatible(format!("two classifiers for `{}`", feature.name())));
            }
            *slot = Some(ck);
        }
        let checkpoints: Vec<Checkpoint> = slots
            .into_iter()
            .zip(Feature::ALL)
            .map(|(s, f)| s.ok_or_else(|| Error::Missing(format!("no classifier for `{}`", f.name()))))
            .collect::<Result<_>>()?;
        let first = &checkpoints[0];
        for ck in &checkpoints[1..] {
            if ck.feature_hash != first.feature_hash || ck.stats_hash != first.stats_hash {
                return Err(Error::Incompatible(
                    "classifiers were trained on different features or statistics".into(),
                ));
            }
        }
        Ok(BfEnsemble { checkpoints })
    }

    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        Self::new(paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<_>>()?)
    }

    /// Loads `bf_bow.ckpt` .. `bf_pos.ckpt` from a run directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let paths: Vec<PathBuf> = Target::BF.iter().map(|t| dir.join(format!("{}.ckpt", t.name()))).collect();
        Self::load(&paths)
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn feature_hash(&self) -> &str {
        &self.checkpoints[0].feature_hash
    }

    pub fn stats_hash(&self) -> &str {
        &self.checkpoints[0].stats_hash
    }

    /// Decodes all four label streams from normalized features, with
    /// silence decided jointly (see [`reconcile_silence`]).
    pub fn predict(&self, mel: &Array2<f64>) -> Result<LabelSequence> {
        let probs: Vec<BfProbabilities> = self
            .checkpoints
            .iter()
            .map(|ck| bf_model::bf_forward(ck.bf().expect("classifier checkpoint"), mel))
            .collect::<Result<_>>()?;
        reconcile_silence(&probs.try_into().expect("four streams"))
    }
}

/// Joint decoding of the four streams' probabilities, in [`Feature::ALL`]
/// order. The classifiers run independently and may disagree about silence,
/// which must hold in all streams or none: a frame is silent when the mean of
/// the four silence probabilities is at least one half, otherwise every
/// stream takes its most probable sounding class.
pub fn reconcile_silence(probs: &[BfProbabilities; 4]) -> Result<LabelSequence> {
    let t = probs[0].data.nrows();
    for (p, f) in probs.iter().zip(Feature::ALL) {
        if p.data.dim() != (t, f.n_classes()) {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities are {:?}, expected ({t}, {})",
                f.name(),
                p.data.dim(),
                f.n_classes()
            )));
        }
    }
    let mut streams: [Vec<usize>; 4] = Default::default();
    for i in 0..t {
        let silence: f64 = probs.iter().zip(Feature::ALL).map(|(p, f)| p.data[[i, f.silence()]]).sum::<f64>() / 4.0;
        for ((stream, p), f) in streams.iter_mut().zip(probs).zip(Feature::ALL) {
            stream.push(if silence >= 0.5 {
                f.silence()
            } else {
                labels::argmax(p.data.slice(s![i, ..f.silence()]))
            });
        }
    }
    let [bow, str, fing, pos] = streams;
    LabelSequence::from_classes(bow, str, fing, pos)
}

/// Replaces the annotated labels of each sample with classifier output.
pub fn substitute_predicted_labels(
    samples: &[AlignedSample],
    ensemble: &BfEnsemble,
    stats: &NormalizationStats,
) -> Result<Vec<AlignedSample>> {
    samples
        .par_iter()
        .map(|s| {
            let labels = ensemble.predict(&stats.normalize_features(&s.mel)?)?;
            Ok(AlignedSample { labels, ..s.clone() })
        })
        .collect()
}

/// Generates motion for one piece from labels and raw (unnormalized)
/// features, in normalized coordinates.
pub fn predict_normalized_motion(
    motion: &Checkpoint,
    labels: &LabelSequence,
    features: &Array2<f64>,
    stats: &NormalizationStats,
    frame_rate: f64,
) -> Result<MotionSequence> {
    let net = motion
        .motion()
        .ok_or_else(|| Error::Incompatible("expected a motion checkpoint".into()))?;
    let bf = labels::concat_bf_without(labels, &motion.train_config.dropped_features())?;
    let mel = stats.normalize_features(features)?;
    motion_model::motion_forward(net, &bf, &mel, frame_rate)
}

/// Like [`predict_normalized_motion`], mapped back to capture units.
pub fn predict_motion(
    motion: &Checkpoint,
    labels: &LabelSequence,
    features: &Array2<f64>,
    stats: &NormalizationStats,
    frame_rate: f64,
) -> Result<MotionSequence> {
    let out = predict_normalized_motion(motion, labels, features, stats, frame_rate)?;
    Ok(MotionSequence::from_flat(stats.denormalize_motion(&out.flat())?, frame_rate))
}

/// Normalized copy of a motion sequence.
pub fn normalize_sequence(m: &MotionSequence, stats: &NormalizationStats) -> Result<MotionSequence> {
    Ok(MotionSequence::from_flat(stats.normalize_motion(&m.flat())?, m.frame_rate))
}

/// Scores a motion checkpoint on samples, driving it with their annotated
/// labels. Metrics are computed in normalized coordinates.
pub fn evaluate_motion_checkpoint(
    motion: &Checkpoint,
    samples: &[AlignedSample],
    stats: &NormalizationStats,
    schema: &SkeletonSchema,
) -> Result<MetricReport> {
    let pairs: Vec<(String, Array3<f64>, Array3<f64>)> = samples
        .par_iter()
        .map(|s| {
            let pred = predict_normalized_motion(motion, &s.labels, &s.mel, stats, s.frame_rate)?;
            let gt = normalize_sequence(&s.motion, stats)?;
            Ok((s.piece_id.clone(), pred.data, gt.data))
        })
        .collect::<Result<_>>()?;
    let mut pred = BTreeMap::new();
    let mut gt = BTreeMap::new();
    for (id, p, g) in pairs {
        pred.insert(id.clone(), p);
        gt.insert(id, g);
    }
    metrics::evaluate(&pred, &gt, schema)
}

/// Files written by a training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub stats: PathBuf,
    pub outcome: TrainOutcome,
}

fn run_and_save(
    name: &str,
    config: &TrainConfig,
    arch: &Architecture,
    data: &TrainingData,
    out: &Path,
) -> Result<RunArtifacts> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(format!("{name}.log.jsonl"));
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let outcome = trainer::train(config, arch, data, Some(&mut log))?;
    std::io::Write::flush(&mut log).map_err(|e| Error::io(&log_path, e))?;
    let checkpoint = out.join(format!("{name}.ckpt"));
    outcome.checkpoint.save(&checkpoint)?;
    let stats = out.join("stats.json");
    data.stats.save(&stats)?;
    Ok(RunArtifacts {
        checkpoint,
        log: log_path,
        stats,
        outcome,
    })
}

fn training_data(cfg: &ExperimentConfig, data_dir: &Path, config: &TrainConfig, bf_dir: Option<&Path>) -> Result<TrainingData> {
    let ds = PreparedDataset::load(data_dir)?;
    check_dataset(&ds, cfg)?;
    let mut data = TrainingData::from_prepared(&ds)?;
    if config.target == Target::Motion && config.bf_source == BfSource::Predicted {
        let dir = bf_dir.ok_or_else(|| Error::Missing("predicted labels need the classifier run directory".into()))?;
        let ensemble = BfEnsemble::load_dir(dir)?;
        if ensemble.stats_hash() != data.stats.hash() || ensemble.feature_hash() != data.feature_hash {
            return Err(Error::Incompatible("classifiers were trained on a different dataset".into()));
        }
        data.train = substitute_predicted_labels(&data.train, &ensemble, &data.stats)?;
        data.val = substitute_predicted_labels(&data.val, &ensemble, &data.stats)?;
    }
    Ok(data)
}

/// Trains one target on a prepared dataset and writes its checkpoint and
/// log into `out` as `<target>.ckpt` / `<target>.log.jsonl`.
pub fn train_target(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    target: Target,
    seed: u64,
    out: &Path,
    bf_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let config = cfg.train_config(target, seed);
    let data = training_data(cfg, data_dir, &config, bf_dir)?;
    run_and_save(target.name(), &config, &cfg.architecture()?, &data, out)
}

/// Trains the motion model under an ablation variant, written as
/// `motion_<variant>.ckpt`.
pub fn ablate(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    variant: Ablation,
    seed: u64,
    out: &Path,
    bf_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let config = TrainConfig {
        ablation: variant,
        ..cfg.train_config(Target::Motion, seed)
    };
    config.validate()?;
    let data = training_data(cfg, data_dir, &config, bf_dir)?;
    run_and_save(&format!("motion_{}", variant.name()), &config, &cfg.architecture()?, &data, out)
}

/// Where inference features come from.
#[derive(Debug, Clone)]
pub enum InferenceInput {
    /// A WAV file, run through the configured front-end.
    Audio(PathBuf),
    /// A cached feature matrix with its sidecar (e.g. a synthetic piece).
    Features(PathBuf),
}

/// Features of a waveform, padded at the end like prepared samples so a
/// recording of `d` seconds yields `d * frame_rate` frames.
pub fn audio_features(wave: &[f64], mel: &MelConfig) -> Result<Array2<f64>> {
    if wave.len() < mel.window {
        return Err(Error::TooShort(format!(
            "audio has {} samples, one analysis window needs {}",
            wave.len(),
            mel.window
        )));
    }
    let mut padded = wave.to_vec();
    padded.resize(wave.len() + mel.window - mel.hop, 0.0);
    Ok(audio::mel_spectrogram(&padded, mel)?.data)
}

/// Result of one inference call.
#[derive(Debug, Clone)]
pub struct Inference {
    pub piece_id: String,
    pub labels: LabelSequence,
    pub motion: MotionSequence,
}

/// Runs the classifiers and the motion model on one input.
pub fn infer(
    cfg: &ExperimentConfig,
    input: &InferenceInput,
    ensemble: &BfEnsemble,
    motion: &Checkpoint,
    stats: &NormalizationStats,
) -> Result<Inference> {
    let (features, feature_hash, piece_id, frame_rate) = match input {
        InferenceInput::Audio(path) => {
            let (mut wave, sr) = audio::read_wav(path)?;
            if sr != cfg.mel.sample_rate {
                log::warn!("{}: resampling audio from {sr} Hz to {} Hz", path.display(), cfg.mel.sample_rate);
                wave = audio::resample_audio(&wave, sr, cfg.mel.sample_rate);
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (audio_features(&wave, &cfg.mel)?, cfg.mel.hash(), stem, cfg.mel.frame_rate())
        }
        InferenceInput::Features(path) => {
            let (f, meta): (Array2<f64>, FeatureMeta) = dataset::read_features(path)?;
            (f, meta.mel_config_hash, meta.piece_id, meta.frame_rate)
        }
    };
    if motion.motion().is_none() {
        return Err(Error::Incompatible("the motion checkpoint holds a classifier".into()));
    }
    let stats_hash = stats.hash();
    for ck in ensemble.checkpoints().iter().chain([motion]) {
        if ck.feature_hash != feature_hash {
            return Err(Error::Incompatible(format!(
                "{} checkpoint expects features {}, input has {feature_hash}",
                ck.train_config.target.name(),
                ck.feature_hash
            )));
        }
        if ck.stats_hash != stats_hash {
            return Err(Error::Incompatible(format!(
                "{} checkpoint was trained with other normalization statistics",
                ck.train_config.target.name()
            )));
        }
    }
    let labels = ensemble.predict(&stats.normalize_features(&features)?)?;
    let motion = predict_motion(motion, &labels, &features, stats, frame_rate)?;
    Ok(Inference {
        piece_id,
        labels,
        motion,
    })
}

/// Path of the decoded-label file written next to an inferred motion file.
pub fn labels_path(motion_out: &Path) -> PathBuf {
    motion_out.with_extension("labels.json")
}

/// Writes the motion CSV (with sidecar) and the decoded labels.
pub fn write_inference(result: &Inference, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dataset::write_motion(
        out,
        &result.motion,
        &MotionMeta {
            fps: result.motion.frame_rate,
            n_joints: result.motion.joints(),
            performer_id: None,
            synthetic: false,
        },
    )?;
    let rate = result.motion.frame_rate;
    let annotation = Annotation {
        piece_id: result.piece_id.clone(),
        events: labels::frames_to_events(&result.labels, rate),
    };
    let events: serde_json::Value = serde_json::from_str(&labels::annotation_to_json(&annotation))?;
    let doc = json!({
        "piece_id": result.piece_id,
        "frame_rate": rate,
        "frames": result.labels,
        "annotation": events,
    });
    let path = labels_path(out);
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))
}

fn collect_motion(dir: &Path, n_joints: usize) -> Result<BTreeMap<String, Array3<f64>>> {
    let mut out = BTreeMap::new();
    let samples = dir.join("samples");
    if samples.is_dir() {
        // A prepared dataset: evaluate against its test split.
        let split = SplitSpec::load(&dir.join("split.json"))?;
        for id in &split.test {
            let (m, _) = dataset::read_motion(&samples.join(id).join("motion.csv"))?;
            out.insert(id.clone(), m.data);
        }
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (m, _) = dataset::read_motion(&f)?;
            out.insert(id, m.data);
        }
    }
    for (id, m) in &out {
        if m.dim().1 != n_joints {
            return Err(Error::Incompatible(format!(
                "{id} has {} joints, schema has {n_joints}",
                m.dim().1
            )));
        }
    }
    Ok(out)
}

/// Scores a directory of predicted `<piece>.csv` files against ground truth
/// given either as `<piece>.csv` files or as a prepared dataset (test split).
/// With `stats`, both sides are normalized first so the numbers match
/// [`evaluate_motion_checkpoint`]. Writes the JSON report, and per-metric
/// plots when `plots` is given.
pub fn evaluate_dirs(
    pred: &Path,
    gt: &Path,
    schema: &SkeletonSchema,
    stats: Option<&NormalizationStats>,
    out: &Path,
    plots: Option<&Path>,
) -> Result<MetricReport> {
    schema.validate()?;
    let mut p = collect_motion(pred, schema.n_joints)?;
    let mut g = collect_motion(gt, schema.n_joints)?;
    if let Some(stats) = stats {
        for m in p.values_mut().chain(g.values_mut()) {
            let seq = MotionSequence::new(std::mem::take(m), 0.0);
            *m = normalize_sequence(&seq, stats)?.data;
        }
    }
    let report = metrics::evaluate(&p, &g, schema)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(out, e))?;
    if let Some(dir) = plots {
        report.write_plots(dir)?;
    }
    Ok(report)
}

/// Generates a synthetic corpus and writes it as a prepared dataset, plus
/// `synth.json` recording the generator settings and separation margin.
pub fn write_synth(cfg: &SynthConfig, schema: &SkeletonSchema, out: &Path) -> Result<PreparedDataset> {
    let corpus = synth::generate_corpus_with_schema(cfg, schema)?;
    let summary = json!({ "config": corpus.config, "delta": corpus.delta });
    let ds = corpus.into_prepared()?;
    ds.write(out)?;
    let path = out.join("synth.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_is_decided_jointly() {
        // Frame 0: only the bow stream leans silent -> sounding everywhere.
        // Frame 1: three streams lean silent -> silent everywhere.
        let bow = ndarray::array![[0.1, 0.2, 0.7], [0.1, 0.1, 0.8]];
        let mut str = Array2::from_elem((2, 5), 0.05);
        str[[0, 1]] = 0.8;
        str[[1, 4]] = 0.8;
        let mut fing = Array2::from_elem((2, 6), 0.04);
        fing[[0, 2]] = 0.8;
        fing[[1, 5]] = 0.8;
        let mut pos = Array2::from_elem((2, 13), 0.01);
        pos[[0, 0]] = 0.88;
        pos[[1, 0]] = 0.88;
        let probs = [bow, str, fing, pos].map(|data| BfProbabilities { data });
        let seq = reconcile_silence(&probs).unwrap();
        assert_eq!((seq.bow[0], seq.str[0], seq.fing[0], seq.pos[0]), (1, 1, 2, 0));
        assert!(seq.is_silent(1));
        assert_eq!((seq.bow[1], seq.str[1], seq.fing[1], seq.pos[1]), (2, 4, 5, 12));
    }

    #[test]
    fn default_split_shapes() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i:02}")).collect();
        let s = default_split(&ids);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 2));
        let s = default_split(&ids[..3]);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
        let s = default_split(&ids[..1]);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 0, 0));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        let mut cfg = ExperimentConfig::desk();
        cfg.schema = Some("skeleton.json".into());
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(back.schema.as_deref(), Some(dir.path().join("skeleton.json").as_path()));
        assert_eq!(back.train, cfg.train);

        fs::write(&path, r#"{"motion": {"n_mels": 64}}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
        fs::write(&path, r#"{"train": {"patience": 50, "max_epochs": 10}}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
    }
}
