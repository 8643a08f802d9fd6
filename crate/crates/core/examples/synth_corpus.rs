//! Generates a small synthetic corpus and writes it as a prepared dataset.
//!
//! `cargo run --release --example synth_corpus -- /tmp/synth`

use std::path::PathBuf;

use violin_motion::labels::Feature;
use violin_motion::pipeline::write_synth;
use violin_motion::skeleton::SkeletonSchema;
use violin_motion::synth::{generate_corpus, SynthConfig};

fn main() -> violin_motion::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("violin-synth"));
    let cfg = SynthConfig {
        n_pieces: 10,
        val_pieces: 2,
        test_pieces: 2,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    println!("{} pieces, pose separation margin {:.4}", corpus.samples.len(), corpus.delta);
    let first = &corpus.samples[0];
    for f in Feature::ALL {
        let stream = first.labels.stream(f);
        let sounding = stream.iter().filter(|&&c| c != f.silence()).count();
        println!("  {}: {sounding}/{} frames sounding", f.name(), stream.len());
    }
    let ds = write_synth(&cfg, &SkeletonSchema::default(), &out)?;
    println!(
        "wrote {} train / {} val / {} test pieces to {}",
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        out.display()
    );
    Ok(())
}
