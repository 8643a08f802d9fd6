//! Log-Mel features of a synthetic two-note recording.
//!
//! `cargo run --release --example mel_features`

use std::f64::consts::PI;

use violin_motion::audio::{hz_to_mel, mel_spectrogram, MelConfig};
use violin_motion::labels::argmax;

fn main() -> violin_motion::Result<()> {
    let cfg = MelConfig::default();
    let sr = cfg.sample_rate as f64;
    // One second of A4 followed by one second of E5.
    let wave: Vec<f64> = (0..2 * cfg.sample_rate as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let f = if t < 1.0 { 440.0 } else { 659.3 };
            0.5 * (2.0 * PI * f * t).sin()
        })
        .collect();
    let mel = mel_spectrogram(&wave, &cfg)?;
    println!(
        "{} samples at {} Hz -> {} frames x {} bands ({} Hz frame rate)",
        wave.len(),
        cfg.sample_rate,
        mel.frames(),
        cfg.n_mels,
        cfg.frame_rate()
    );
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    for t in [5, 20, 40, 55] {
        let band = argmax(mel.data.row(t));
        let centre = violin_motion::audio::mel_to_hz(lo + (hi - lo) * (band + 1) as f64 / (cfg.n_mels + 1) as f64);
        println!("frame {t:>2}: loudest band {band:>3} (~{centre:.0} Hz), log energy {:.2}", mel.data[[t, band]]);
    }
    Ok(())
}
