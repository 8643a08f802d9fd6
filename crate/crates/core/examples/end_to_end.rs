//! The whole workflow on disk: synthesize a dataset, train the four
//! classifiers and the motion model, infer one piece from its features and
//! score the result.
//!
//! `cargo run --release --example end_to_end -- /tmp/violin-run`

use std::path::PathBuf;

use violin_motion::pipeline::{
    evaluate_dirs, infer, train_target, write_inference, write_synth, BfEnsemble, ExperimentConfig, InferenceInput,
    TrainSettings,
};
use violin_motion::skeleton::SkeletonSchema;
use violin_motion::synth::SynthConfig;
use violin_motion::trainer::Target;

fn main() -> violin_motion::Result<()> {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("violin-run"));
    let cfg = ExperimentConfig {
        train: TrainSettings {
            max_epochs: 4,
            ..ExperimentConfig::desk().train
        },
        ..ExperimentConfig::desk()
    };
    let schema = SkeletonSchema::default();
    let data = root.join("data");
    let synth = SynthConfig {
        n_pieces: 10,
        val_pieces: 2,
        test_pieces: 2,
        ..SynthConfig::default()
    };
    let ds = write_synth(&synth, &schema, &data)?;

    let run = root.join("run");
    let mut classifiers = Vec::new();
    for target in Target::BF.into_iter().chain([Target::Motion]) {
        let artifacts = train_target(&cfg, &data, target, 0, &run, None)?;
        println!(
            "{:<7} best validation loss {:.4} at epoch {}",
            target.name(),
            artifacts.outcome.checkpoint.best_val_loss,
            artifacts.outcome.checkpoint.epoch
        );
        if target == Target::Motion {
            let ensemble = BfEnsemble::new(classifiers.clone())?;
            let pred = root.join("pred");
            for id in &ds.split.test {
                let input = InferenceInput::Features(data.join("samples").join(id).join("features.bin"));
                let result = infer(&cfg, &input, &ensemble, &artifacts.outcome.checkpoint, &ds.stats)?;
                write_inference(&result, &pred.join(format!("{id}.csv")))?;
            }
            let report = evaluate_dirs(&pred, &data, &schema, Some(&ds.stats), &root.join("report.json"), None)?;
            print!("{}", report.to_table());
        } else {
            classifiers.push(artifacts.outcome.checkpoint);
        }
    }
    Ok(())
}
