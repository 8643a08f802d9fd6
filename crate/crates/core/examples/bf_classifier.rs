//! Trains the string classifier on a synthetic corpus and reports frame
//! accuracy.
//!
//! `cargo run --release --example bf_classifier`

use violin_motion::labels::Feature;
use violin_motion::synth::{generate_corpus, SynthConfig};
use violin_motion::trainer::{bf_accuracy, train, Architecture, Target, TrainConfig, TrainingData};

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
    let cfg = TrainConfig {
        max_epochs: 5,
        clip_length: 60,
        clip_hop: 60,
        ..TrainConfig::for_target(Target::BfStr)
    };
    let mut log = std::io::stdout();
    let out = train(&cfg, &Architecture::desk(), &data, Some(&mut log))?;
    let net = out.checkpoint.bf().expect("classifier checkpoint");
    println!(
        "best epoch {}: train accuracy {:.3}, test accuracy {:.3}",
        out.checkpoint.epoch,
        bf_accuracy(net, Feature::Str, &data.train, &data.stats)?,
        bf_accuracy(net, Feature::Str, &test, &data.stats)?
    );
    Ok(())
}
