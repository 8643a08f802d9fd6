//! Recordings, frame alignment, normalization and splits.
//!
//! Also owns the on-disk formats: motion CSV with a JSON sidecar, and the
//! prepared-dataset cache written by `prepare` and `synth`:
//!
//! ```text
//! <dir>/split.json
//! <dir>/stats.json
//! <dir>/samples/<piece_id>/features.bin   little-endian f64, row-major T x F
//! <dir>/samples/<piece_id>/features.json  shape, Mel config hash, frame rate
//! <dir>/samples/<piece_id>/labels.json    0-based class indices per stream
//! <dir>/samples/<piece_id>/motion.csv     joint positions at the frame rate
//! <dir>/samples/<piece_id>/motion.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{self, MelConfig};
use crate::error::{Error, Result};
use crate::labels::{self, LabelSequence, NoteEvent};

/// Largest tolerated disagreement between audio and motion durations.
pub const DURATION_TOLERANCE_S: f64 = 0.5;
/// Floor applied to every variance before it is used for whitening.
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Model frame rate: an exact 1470-sample hop at 44.1 kHz and a 4:1
/// reduction of 120 fps capture.
pub const DEFAULT_FRAME_RATE: f64 = 30.0;

/// `T x N x 3` joint positions sampled at `frame_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub data: Array3<f64>,
    pub frame_rate: f64,
}

impl MotionSequence {
    pub fn new(data: Array3<f64>, frame_rate: f64) -> Self {
        MotionSequence { data, frame_rate }
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn joints(&self) -> usize {
        self.data.dim().1
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.frame_rate
    }

    /// Row-per-frame view, `T x 3N`.
    pub fn flat(&self) -> Array2<f64> {
        let (t, n, _) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, 3 * n))
            .expect("contiguous")
    }

    pub fn from_flat(flat: Array2<f64>, frame_rate: f64) -> Self {
        let (t, w) = flat.dim();
        assert_eq!(w % 3, 0, "flat motion width must be a multiple of 3");
        let data = flat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, w / 3, 3))
            .expect("contiguous");
        MotionSequence { data, frame_rate }
    }

    pub fn truncate(&mut self, t: usize) {
        let t = t.min(self.frames());
        self.data = self.data.slice_axis(Axis(0), (0..t).into()).to_owned();
    }
}

/// Sidecar metadata for a motion CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMeta {
    pub fps: f64,
    pub n_joints: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performer_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn motion_header(n_joints: usize) -> Vec<String> {
    let mut h = vec!["frame".to_string()];
    for j in 0..n_joints {
        for axis in ["x", "y", "z"] {
            h.push(format!("j{j}_{axis}"));
        }
    }
    h
}

/// Writes a motion CSV (`frame,j0_x,...`) and its JSON sidecar. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_motion(path: &Path, motion: &MotionSequence, meta: &MotionMeta) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(motion_header(motion.joints()))?;
    for (t, frame) in motion.data.outer_iter().enumerate() {
        let mut rec = Vec::with_capacity(1 + frame.len());
        rec.push(t.to_string());
        rec.extend(frame.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&side, e))
}

/// Reads a motion CSV and its sidecar, checking the header against the
/// declared joint count.
pub fn read_motion(path: &Path) -> Result<(MotionSequence, MotionMeta)> {
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: MotionMeta = serde_json::from_str(&meta_text).map_err(|e| Error::malformed(&side, e.to_string()))?;
    if !(meta.fps > 0.0) {
        return Err(Error::malformed(&side, "fps must be positive"));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() != 1 + 3 * meta.n_joints || header != motion_header(meta.n_joints) {
        return Err(Error::malformed(
            path,
            format!(
                "header has {} columns, expected frame + 3 x {} joints",
                header.len(),
                meta.n_joints
            ),
        ));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::malformed(path, format!("row {rows} has {} columns", rec.len())));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::malformed(path, format!("row {rows}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::malformed(path, format!("row {rows}: non-finite value")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let data = Array3::from_shape_vec((rows, meta.n_joints, 3), values).expect("row count checked");
    Ok((MotionSequence::new(data, meta.fps), meta))
}

/// One performance: audio, captured motion and note annotations.
#[derive(Debug, Clone)]
pub struct Recording {
    pub piece_id: String,
    pub performer_id: String,
    pub audio: Vec<f64>,
    pub sample_rate: u32,
    pub motion: MotionSequence,
    pub annotations: Vec<NoteEvent>,
    pub duration_s: f64,
}

impl Recording {
    /// Builds a recording, enforcing the duration agreement between audio
    /// and motion.
    pub fn new(
        piece_id: impl Into<String>,
        performer_id: impl Into<String>,
        audio: Vec<f64>,
        sample_rate: u32,
        motion: MotionSequence,
        annotations: Vec<NoteEvent>,
    ) -> Result<Self> {
        let duration_s = audio.len() as f64 / sample_rate as f64;
        let motion_s = motion.duration_s();
        if (duration_s - motion_s).abs() > DURATION_TOLERANCE_S {
            return Err(Error::DurationMismatch {
                audio_s: duration_s,
                motion_s,
                tolerance_s: DURATION_TOLERANCE_S,
            });
        }
        Ok(Recording {
            piece_id: piece_id.into(),
            performer_id: performer_id.into(),
            audio,
            sample_rate,
            motion,
            annotations,
            duration_s,
        })
    }
}

/// Loads an audio/motion/annotation triple. Audio at a rate other than
/// `target_sample_rate` is resampled with a warning.
pub fn load_recording(
    audio_path: &Path,
    motion_path: &Path,
    annotation_path: &Path,
    n_joints: usize,
    target_sample_rate: u32,
) -> Result<Recording> {
    let (mut audio, mut sr) = audio::read_wav(audio_path).map_err(|e| match e {
        Error::Wav(w) => Error::malformed(audio_path, w.to_string()),
        other => other,
    })?;
    if sr != target_sample_rate {
        log::warn!(
            "{}: resampling audio from {sr} Hz to {target_sample_rate} Hz",
            audio_path.display()
        );
        audio = audio::resample_audio(&audio, sr, target_sample_rate);
        sr = target_sample_rate;
    }
    let (motion, meta) = read_motion(motion_path)?;
    if meta.n_joints != n_joints {
        return Err(Error::malformed(
            motion_path,
            format!("{} joints, skeleton expects {n_joints}", meta.n_joints),
        ));
    }
    let text = fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let annotation = labels::parse_annotation(&text)?;
    Recording::new(
        annotation.piece_id,
        meta.performer_id.unwrap_or_else(|| "unknown".into()),
        audio,
        sr,
        motion,
        annotation.events,
    )
}

/// Per-joint linear interpolation in time. The output has
/// `round(T * dst / src)` frames; frame `i` samples source time `i / dst`.
pub fn resample_motion(motion: &MotionSequence, dst_rate: f64) -> Result<MotionSequence> {
    let src_rate = motion.frame_rate;
    if !(src_rate > 0.0 && dst_rate > 0.0) {
        return Err(Error::Config(format!("rates must be positive, got {src_rate} -> {dst_rate}")));
    }
    let t_src = motion.frames();
    if t_src == 0 {
        return Err(Error::EmptySequence("motion has no frames".into()));
    }
    if src_rate == dst_rate {
        return Ok(motion.clone());
    }
    let t_dst = (t_src as f64 * dst_rate / src_rate).round() as usize;
    let (_, n, _) = motion.data.dim();
    let mut out = Array3::zeros((t_dst, n, 3));
    for i in 0..t_dst {
        let pos = i as f64 * src_rate / dst_rate;
        let lo = (pos.floor() as usize).min(t_src - 1);
        let hi = (lo + 1).min(t_src - 1);
        let frac = (pos - lo as f64).clamp(0.0, 1.0);
        let a = motion.data.index_axis(Axis(0), lo);
        let b = motion.data.index_axis(Axis(0), hi);
        let mut dst = out.index_axis_mut(Axis(0), i);
        if frac == 0.0 {
            dst.assign(&a);
        } else {
            dst.assign(&(&a + &((&b - &a) * frac)));
        }
    }
    Ok(MotionSequence::new(out, dst_rate))
}

/// Frame-synchronous model input/target triple.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub piece_id: String,
    pub performer_id: String,
    /// `T x F` features (log-Mel, or synthetic features in the same space).
    pub mel: Array2<f64>,
    pub labels: LabelSequence,
    pub motion: MotionSequence,
    pub frame_rate: f64,
}

impl AlignedSample {
    pub fn new(
        piece_id: impl Into<String>,
        performer_id: impl Into<String>,
        mel: Array2<f64>,
        labels: LabelSequence,
        motion: MotionSequence,
        frame_rate: f64,
    ) -> Result<Self> {
        let t = mel.nrows();
        if labels.len() != t || motion.frames() != t {
            return Err(Error::DimensionMismatch(format!(
                "features {t}, labels {}, motion {} frames",
                labels.len(),
                motion.frames()
            )));
        }
        if motion.frame_rate != frame_rate {
            return Err(Error::DimensionMismatch(format!(
                "motion at {} Hz, sample at {frame_rate} Hz",
                motion.frame_rate
            )));
        }
        Ok(AlignedSample {
            piece_id: piece_id.into(),
            performer_id: performer_id.into(),
            mel,
            labels,
            motion,
            frame_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }
}

/// Turns a recording into an aligned sample at `frame_rate`.
///
/// The waveform is padded at the end with `window - hop` zeros so that a
/// recording of `d` seconds yields `d * frame_rate` feature frames; all
/// streams are then truncated to the shortest.
pub fn align(recording: &Recording, frame_rate: f64, mel_config: &MelConfig) -> Result<AlignedSample> {
    mel_config.validate()?;
    if mel_config.hop as f64 * frame_rate != mel_config.sample_rate as f64 {
        return Err(Error::Config(format!(
            "frame rate {frame_rate} Hz does not match hop {} at {} Hz",
            mel_config.hop, mel_config.sample_rate
        )));
    }
    if recording.sample_rate != mel_config.sample_rate {
        return Err(Error::Config(format!(
            "recording at {} Hz, features expect {} Hz",
            recording.sample_rate, mel_config.sample_rate
        )));
    }
    if recording.audio.is_empty() {
        return Err(Error::EmptySequence(format!("{}: audio has no samples", recording.piece_id)));
    }
    let mut padded = recording.audio.clone();
    padded.resize(padded.len() + mel_config.window - mel_config.hop, 0.0);
    let mel = audio::mel_spectrogram(&padded, mel_config)?;
    let motion = resample_motion(&recording.motion, frame_rate)?;
    let t_labels = (recording.duration_s * frame_rate).round() as usize;
    let t = mel.frames().min(motion.frames()).min(t_labels);
    if t == 0 {
        return Err(Error::EmptySequence(format!("{}: no aligned frames", recording.piece_id)));
    }
    let mut labels = labels::events_to_frames(&recording.annotations, frame_rate, t_labels);
    labels.truncate(t);
    let mut motion = motion;
    motion.truncate(t);
    let feats = mel.data.slice_axis(Axis(0), (0..t).into()).to_owned();
    AlignedSample::new(
        recording.piece_id.clone(),
        recording.performer_id.clone(),
        feats,
        labels,
        motion,
        frame_rate,
    )
}

/// Training-set statistics for whitening features and motion. Variances are
/// population variances, floored at [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub stats_version: u32,
    pub mel_mean: Vec<f64>,
    pub mel_var: Vec<f64>,
    /// Per joint, per axis.
    pub motion_mean: Vec<[f64; 3]>,
    pub motion_var: Vec<[f64; 3]>,
}

fn column_stats(rows: &[ndarray::ArrayView2<f64>]) -> (Vec<f64>, Vec<f64>) {
    let cols = rows[0].ncols();
    let n: usize = rows.iter().map(|r| r.nrows()).sum();
    let mut mean = vec![0.0; cols];
    for r in rows {
        for row in r.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; cols];
    for r in rows {
        for row in r.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    var.iter_mut().for_each(|s| *s = (*s / n as f64).max(VARIANCE_FLOOR));
    (mean, var)
}

impl NormalizationStats {
    pub const VERSION: u32 = 1;

    pub fn motion_mean_flat(&self) -> ndarray::Array1<f64> {
        self.motion_mean.iter().flatten().copied().collect()
    }

    pub fn motion_std_flat(&self) -> ndarray::Array1<f64> {
        self.motion_var.iter().flatten().map(|v| v.sqrt()).collect()
    }

    fn check_motion(&self, width: usize) -> Result<()> {
        if self.motion_mean.len() * 3 != width || self.motion_var.len() * 3 != width {
            return Err(Error::DimensionMismatch(format!(
                "motion has {} joints, statistics have {}",
                width / 3,
                self.motion_mean.len()
            )));
        }
        Ok(())
    }

    /// Whitens flat `T x 3N` motion.
    pub fn normalize_motion(&self, flat: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_motion(flat.ncols())?;
        Ok((flat - &self.motion_mean_flat()) / &self.motion_std_flat())
    }

    pub fn denormalize_motion(&self, flat: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_motion(flat.ncols())?;
        Ok(flat * &self.motion_std_flat() + &self.motion_mean_flat())
    }

    pub fn normalize_features(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        audio::normalize_features(feats, self)
    }

    pub fn denormalize_features(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        if feats.ncols() != self.mel_mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} channels, statistics have {}",
                feats.ncols(),
                self.mel_mean.len()
            )));
        }
        let mean = ndarray::Array1::from(self.mel_mean.clone());
        let std = ndarray::Array1::from(self.mel_var.clone()).mapv(f64::sqrt);
        Ok(feats * &std + &mean)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormalizationStats =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if stats.stats_version != Self::VERSION {
            return Err(Error::malformed(path, format!("unsupported stats_version {}", stats.stats_version)));
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Statistics over the concatenated time axis of every training sample.
pub fn compute_norm_stats(train: &[AlignedSample]) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mels: Vec<_> = train.iter().map(|s| s.mel.view()).collect();
    let (mel_mean, mel_var) = column_stats(&mels);
    let flats: Vec<Array2<f64>> = train.iter().map(|s| s.motion.flat()).collect();
    let views: Vec<_> = flats.iter().map(|f| f.view()).collect();
    let (mm, mv) = column_stats(&views);
    let triples = |v: Vec<f64>| v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(NormalizationStats {
        stats_version: NormalizationStats::VERSION,
        mel_mean,
        mel_var,
        motion_mean: triples(mm),
        motion_var: triples(mv),
    })
}

/// Piece assignment to train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub held_out_performer: Option<String>,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Anything that belongs to a piece and a performer.
pub trait PieceInfo {
    fn piece_id(&self) -> &str;
    fn performer_id(&self) -> &str;
}

impl PieceInfo for AlignedSample {
    fn piece_id(&self) -> &str {
        &self.piece_id
    }
    fn performer_id(&self) -> &str {
        &self.performer_id
    }
}

impl PieceInfo for Recording {
    fn piece_id(&self) -> &str {
        &self.piece_id
    }
    fn performer_id(&self) -> &str {
        &self.performer_id
    }
}

/// Partitions a corpus by piece id. With a held-out performer, all of that
/// performer's pieces form the test set and none reach train or validation.
pub fn split_dataset<T: PieceInfo>(corpus: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let known: BTreeSet<&str> = corpus.iter().map(|p| p.piece_id()).collect();
    let mut assigned: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, list) in [&spec.train, &spec.val, &spec.test].into_iter().enumerate() {
        for id in list {
            if !known.contains(id.as_str()) {
                return Err(Error::UnknownPieceId(id.clone()));
            }
            if assigned.insert(id.as_str(), k).is_some() {
                return Err(Error::OverlappingSplits(id.clone()));
            }
        }
    }
    let held = spec.held_out_performer.as_deref();
    for p in &corpus {
        if !assigned.contains_key(p.piece_id()) && Some(p.performer_id()) != held {
            return Err(Error::UnassignedPiece(p.piece_id().to_string()));
        }
    }
    let assigned: BTreeMap<String, usize> = assigned.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for p in corpus {
        if held.is_some() && Some(p.performer_id()) == held {
            test.push(p);
            continue;
        }
        match assigned.get(p.piece_id()) {
            Some(0) => train.push(p),
            Some(1) => val.push(p),
            Some(_) if held.is_none() => test.push(p),
            _ => log::warn!("dropping piece {} from test: held-out performer split", p.piece_id()),
        }
    }
    Ok((train, val, test))
}

/// Sidecar of a cached feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub piece_id: String,
    pub performer_id: String,
    pub rows: usize,
    pub cols: usize,
    pub frame_rate: f64,
    pub mel_config_hash: String,
    #[serde(default)]
    pub synthetic: bool,
}

pub fn write_f64_bin(path: &Path, data: &Array2<f64>) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64_bin(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::malformed(
            path,
            format!("{} bytes, expected {rows} x {cols} f64", bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

/// Cached features on their own (used for inference inputs).
pub fn read_features(bin_path: &Path) -> Result<(Array2<f64>, FeatureMeta)> {
    let side = bin_path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: FeatureMeta = serde_json::from_str(&text).map_err(|e| Error::malformed(&side, e.to_string()))?;
    Ok((read_f64_bin(bin_path, meta.rows, meta.cols)?, meta))
}

pub fn write_sample(dir: &Path, sample: &AlignedSample, mel_config_hash: &str, synthetic: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = FeatureMeta {
        piece_id: sample.piece_id.clone(),
        performer_id: sample.performer_id.clone(),
        rows: sample.mel.nrows(),
        cols: sample.mel.ncols(),
        frame_rate: sample.frame_rate,
        mel_config_hash: mel_config_hash.to_string(),
        synthetic,
    };
    write_f64_bin(&dir.join("features.bin"), &sample.mel)?;
    let p = dir.join("features.json");
    fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("labels.json");
    fs::write(&p, serde_json::to_string(&sample.labels)?).map_err(|e| Error::io(&p, e))?;
    write_motion(
        &dir.join("motion.csv"),
        &sample.motion,
        &MotionMeta {
            fps: sample.frame_rate,
            n_joints: sample.motion.joints(),
            performer_id: Some(sample.performer_id.clone()),
            synthetic,
        },
    )
}

pub fn read_sample(dir: &Path) -> Result<(AlignedSample, FeatureMeta)> {
    let (mel, meta) = read_features(&dir.join("features.bin"))?;
    let p = dir.join("labels.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let raw: LabelSequence = serde_json::from_str(&text).map_err(|e| Error::malformed(&p, e.to_string()))?;
    let labels = LabelSequence::from_classes(raw.bow, raw.str, raw.fing, raw.pos)?;
    let (motion, _) = read_motion(&dir.join("motion.csv"))?;
    let sample = AlignedSample::new(
        meta.piece_id.clone(),
        meta.performer_id.clone(),
        mel,
        labels,
        motion,
        meta.frame_rate,
    )?;
    Ok((sample, meta))
}

/// A prepared dataset directory loaded into memory.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub samples: Vec<AlignedSample>,
    pub split: SplitSpec,
    pub stats: NormalizationStats,
    pub mel_config_hash: String,
    pub synthetic: bool,
}

impl PreparedDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let samples = dir.join("samples");
        fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
        for s in &self.samples {
            write_sample(&samples.join(&s.piece_id), s, &self.mel_config_hash, self.synthetic)?;
        }
        self.split.save(&dir.join("split.json"))?;
        self.stats.save(&dir.join("stats.json"))
    }

    /// Loads every sample, checking that all share one feature config hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let samples_dir = dir.join("samples");
        let mut entries: Vec<PathBuf> = fs::read_dir(&samples_dir)
            .map_err(|e| Error::io(&samples_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        let mut samples = Vec::with_capacity(entries.len());
        let mut hash: Option<String> = None;
        let mut synthetic = false;
        for e in entries {
            let (s, meta) = read_sample(&e)?;
            match &hash {
                Some(h) if *h != meta.mel_config_hash => {
                    return Err(Error::Incompatible(format!(
                        "{} was extracted with config {}, others with {h}",
                        s.piece_id, meta.mel_config_hash
                    )))
                }
                _ => hash = Some(meta.mel_config_hash.clone()),
            }
            synthetic |= meta.synthetic;
            samples.push(s);
        }
        Ok(PreparedDataset {
            samples,
            split: SplitSpec::load(&dir.join("split.json"))?,
            stats: NormalizationStats::load(&dir.join("stats.json"))?,
            mel_config_hash: hash.unwrap_or_default(),
            synthetic,
        })
    }

    /// Splits a clone of the samples per the stored split.
    pub fn splits(&self) -> Result<(Vec<AlignedSample>, Vec<AlignedSample>, Vec<AlignedSample>)> {
        split_dataset(self.samples.clone(), &self.split)
    }
}
