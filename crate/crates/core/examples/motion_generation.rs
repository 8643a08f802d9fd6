//! Trains the motion model with annotated labels and writes the motion it
//! generates for a held-out piece.
//!
//! `cargo run --release --example motion_generation -- /tmp/motion.csv`

use std::path::PathBuf;

use violin_motion::dataset::{write_motion, MotionMeta};
use violin_motion::pipeline::predict_motion;
use violin_motion::synth::{generate_corpus, SynthConfig};
use violin_motion::trainer::{train, Architecture, Target, TrainConfig, TrainingData};

fn main() -> violin_motion::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("violin-motion.csv"));
    let ds = generate_corpus(&SynthConfig {
        n_pieces: 12,
        val_pieces: 2,
        test_pieces: 2,
        ..SynthConfig::default()
    })?
    .into_prepared()?;
    let (_, _, test) = ds.splits()?;
    let data = TrainingData::from_prepared(&ds)?;
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 8,
        clip_length: 60,
        clip_hop: 30,
        ..TrainConfig::for_target(Target::Motion)
    };
    let result = train(&cfg, &Architecture::desk(), &data, None)?;
    for e in &result.history {
        println!("epoch {:>2}: validation loss {:.4}", e.epoch, e.val_loss);
    }
    let piece = &test[0];
    let motion = predict_motion(&result.checkpoint, &piece.labels, &piece.mel, &data.stats, piece.frame_rate)?;
    let err = (&motion.data - &piece.motion.data).mapv(f64::abs).mean().unwrap_or(0.0);
    println!("{}: {} frames, mean absolute error {err:.4}", piece.piece_id, motion.frames());
    let meta = MotionMeta {
        fps: motion.frame_rate,
        n_joints: motion.joints(),
        performer_id: None,
        synthetic: true,
    };
    write_motion(&out, &motion, &meta)?;
    println!("wrote {}", out.display());
    Ok(())
}
