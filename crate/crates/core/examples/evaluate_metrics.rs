//! Scores perturbed copies of a motion sequence with L1, DTW and jerk.
//!
//! `cargo run --release --example evaluate_metrics`

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use violin_motion::metrics::{add_noise, evaluate};
use violin_motion::skeleton::SkeletonSchema;
use violin_motion::synth::{generate_corpus, SynthConfig};

fn main() -> violin_motion::Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        n_pieces: 3,
        val_pieces: 1,
        test_pieces: 1,
        ..SynthConfig::default()
    })?;
    let schema = SkeletonSchema::default();
    let gt: BTreeMap<String, _> = corpus
        .samples
        .iter()
        .map(|s| (s.piece_id.clone(), s.motion.data.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0, 0.01, 0.05] {
        let pred: BTreeMap<String, _> = gt.iter().map(|(k, m)| (k.clone(), add_noise(m, sigma, &mut rng))).collect();
        let report = evaluate(&pred, &gt, &schema)?;
        println!("noise sigma {sigma}:\n{}", report.to_table());
    }
    // A time-shifted copy costs little under DTW but a lot under L1.
    let lagged: BTreeMap<String, _> = gt
        .iter()
        .map(|(k, m)| {
            let mut shifted = m.clone();
            for t in (5..m.dim().0).rev() {
                shifted.index_axis_mut(ndarray::Axis(0), t).assign(&m.index_axis(ndarray::Axis(0), t - 5));
            }
            (k.clone(), shifted)
        })
        .collect();
    let report = evaluate(&lagged, &gt, &schema)?;
    println!("5-frame lag: L1 {:.4}, DTW {:.4}", report.mean.l1_all, report.mean.dtw_all);
    Ok(())
}
