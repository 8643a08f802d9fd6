//! Log-Mel spectrogram front-end.
//!
//! Framing starts at sample 0 with no centering, so a waveform of `len`
//! samples yields `1 + (len - window) / hop` frames. Each frame is Hann
//! windowed, transformed with an FFT of size `window`, and its power
//! spectrum is projected onto an HTK-spaced, area-normalized triangular
//! filterbank before `ln(energy + log_floor)`.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub window: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 44_100,
            hop: 1470,
            window: 2048,
            n_mels: 128,
            fmin: 30.0,
            fmax: 16_000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || !self.n_mels.is_multiple_of(16) {
            return Err(Error::Config(format!("n_mels {} must be a positive multiple of 16", self.n_mels)));
        }
        if self.hop == 0 || self.hop > self.window {
            return Err(Error::Config(format!("hop {} must be in 1..=window ({})", self.hop, self.window)));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= sample_rate/2",
                self.fmin, self.fmax
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Frames per second implied by the hop.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Number of frames for a waveform of `len` samples, `None` if shorter
    /// than one window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.window).then(|| 1 + (len - self.window) / self.hop)
    }

    /// Short stable digest used to match feature caches and checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangle corner frequencies: `n_mels + 2` points evenly spaced in Mel.
pub fn band_edges(config: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let n = config.n_mels + 1;
    (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
}

/// `n_mels x (window/2 + 1)` filterbank matrix.
pub fn mel_filterbank(config: &MelConfig) -> Array2<f64> {
    let n_bins = config.window / 2 + 1;
    let edges = band_edges(config);
    let bin_hz = config.sample_rate as f64 / config.window as f64;
    Array2::from_shape_fn((config.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let rise = (f - lo) / (center - lo);
        let fall = (hi - f) / (hi - center);
        let tri = rise.min(fall).max(0.0);
        tri * 2.0 / (hi - lo)
    })
}

/// Log-Mel energies, `T x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f64>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub fn mel_spectrogram(wave: &[f64], config: &MelConfig) -> Result<MelSpectrogram> {
    config.validate()?;
    let t = config.num_frames(wave.len()).ok_or_else(|| {
        Error::TooShort(format!(
            "waveform has {} samples, one window needs {}",
            wave.len(),
            config.window
        ))
    })?;
    let n = config.window;
    let window = hann(n);
    let fb = mel_filterbank(config);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut power = Array2::<f64>::zeros((t, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (i, mut row) in power.rows_mut().into_iter().enumerate() {
        let start = i * config.hop;
        for (b, (&x, &w)) in buf.iter_mut().zip(wave[start..start + n].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in row.iter_mut().zip(&buf[..n_bins]) {
            *p = c.norm_sqr();
        }
    }
    let floor = config.log_floor;
    let data = power.dot(&fb.t()).mapv(|e| (e + floor).ln());
    Ok(MelSpectrogram { data, config: *config })
}

/// Whitens each Mel channel with training-set statistics.
pub fn normalize_mel(mel: &MelSpectrogram, stats: &NormalizationStats) -> Result<MelSpectrogram> {
    Ok(MelSpectrogram {
        data: normalize_features(&mel.data, stats)?,
        config: mel.config,
    })
}

/// `(x - mean[f]) / sqrt(var[f])` per column.
pub fn normalize_features(data: &Array2<f64>, stats: &NormalizationStats) -> Result<Array2<f64>> {
    let f = data.ncols();
    if stats.mel_mean.len() != f || stats.mel_var.len() != f {
        return Err(Error::DimensionMismatch(format!(
            "features have {f} channels, statistics have {}",
            stats.mel_mean.len()
        )));
    }
    let mean = Array1::from(stats.mel_mean.clone());
    let std = Array1::from(stats.mel_var.clone()).mapv(f64::sqrt);
    Ok((data - &mean) / &std)
}

/// Mono samples in `[-1, 1]` plus the file's sample rate. Stereo (or wider)
/// files are averaged across channels.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono float32 audio.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Linear-interpolation resampling to `dst_rate`.
pub fn resample_audio(samples: &[f64], src_rate: u32, dst_rate: u32) -> Vec<f64> {
    if src_rate == dst_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = (samples.len() as f64 * dst_rate as f64 / src_rate as f64).round() as usize;
    let step = src_rate as f64 / dst_rate as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = samples[j.min(samples.len() - 1)];
            let b = samples[(j + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}
