//! Compares the full motion model with variants trained without the string
//! labels and without the displacement loss.
//!
//! `cargo run --release --example ablation`

use violin_motion::pipeline::evaluate_motion_checkpoint;
use violin_motion::synth::{generate_corpus, SynthConfig};
use violin_motion::trainer::{run_ablation, Ablation, Architecture, Target, TrainConfig, TrainingData};

fn main() -> violin_motion::Result<()> {
    let ds = generate_corpus(&SynthConfig {
        n_pieces: 12,
        val_pieces: 2,
        test_pieces: 2,
        ..SynthConfig::default()
    })?
    .into_prepared()?;
    let (_, _, test) = ds.splits()?;
    let data = TrainingData::from_prepared(&ds)?;
    let arch = Architecture::desk();
    let base = TrainConfig {
        max_epochs: 8,
        batch_size: 8,
        clip_length: 60,
        clip_hop: 30,
        ..TrainConfig::for_target(Target::Motion)
    };
    println!("{:<8} {:>8} {:>8} {:>10}", "variant", "L1", "DTW", "jerk");
    for variant in [Ablation::None, Ablation::NoStr, Ablation::NoDis] {
        let out = run_ablation(&base, variant, &arch, &data, None)?;
        let report = evaluate_motion_checkpoint(&out.checkpoint, &test, &data.stats, &arch.schema)?;
        println!(
            "{:<8} {:>8.4} {:>8.4} {:>10.6}",
            variant.name(),
            report.mean.l1_all,
            report.mean.dtw_all,
            report.mean.jerk
        );
    }
    Ok(())
}
