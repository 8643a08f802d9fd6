//! Acceptance suite: runs every criterion at its stated tolerance and time
//! budget, printing one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.
//!
//! Run a subset by number: `cargo test --test acceptance -- 1 3 5`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{array, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use violin_motion::bf_model::{self, BfBranchConfig, BfNetwork, BfProbabilities};
use violin_motion::checkpoint::Checkpoint;
use violin_motion::dataset::{self, AlignedSample, MotionMeta, MotionSequence, NormalizationStats};
use violin_motion::labels::{self, Bow, Feature, NoteEvent, ViolinString};
use violin_motion::metrics;
use violin_motion::motion_model::{self, MotionBranchConfig, MotionNetwork};
use violin_motion::nn::gradcheck::{check_gradients, DEFAULT_FLOOR, DEFAULT_STEP};
use violin_motion::nn::{Mode, Parameterized};
use violin_motion::pipeline;
use violin_motion::skeleton::SkeletonSchema;
use violin_motion::synth::{generate_corpus, SynthConfig};
use violin_motion::trainer::{self, Ablation, Architecture, Target, TrainConfig, TrainingData};

/// Outcome of one criterion: pass/fail plus a one-line summary of the
/// measured values.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "loss identities",
            budget: Duration::from_secs(1),
            run: loss_identities,
        },
        Criterion {
            id: 2,
            name: "gradient checks",
            budget: Duration::from_secs(120),
            run: gradient_checks,
        },
        Criterion {
            id: 3,
            name: "DTW oracle equivalence",
            budget: Duration::from_secs(30),
            run: dtw_oracle_equivalence,
        },
        Criterion {
            id: 4,
            name: "shape/invariant suite",
            budget: Duration::from_secs(60),
            run: shape_suite,
        },
        Criterion {
            id: 5,
            name: "jerk calibration",
            budget: Duration::from_secs(1),
            run: jerk_calibration,
        },
        Criterion {
            id: 6,
            name: "synthetic learnability (classifiers)",
            budget: Duration::from_secs(15 * 60),
            run: bf_learnability,
        },
        Criterion {
            id: 7,
            name: "synthetic learnability (motion)",
            budget: Duration::from_secs(15 * 60),
            run: motion_learnability,
        },
        Criterion {
            id: 8,
            name: "ablation directions",
            budget: Duration::from_secs(45 * 60),
            run: ablation_directions,
        },
        Criterion {
            id: 9,
            name: "determinism",
            budget: Duration::from_secs(5 * 60),
            run: determinism,
        },
        Criterion {
            id: 10,
            name: "round trips",
            budget: Duration::from_secs(60),
            run: round_trips,
        },
    ];

    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|e| Verdict::new(false, format!("panicked: {}", panic_message(&e))));
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = verdict.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {} ({:.1} s of {} s{}): {}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_time { "" } else { ", over budget" },
            verdict.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn random3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

// 1 ------------------------------------------------------------------------

fn loss_identities() -> Verdict {
    let mut worst_ce: f64 = 0.0;
    for t in 1..=5 {
        for class in 0..3 {
            let p = BfProbabilities {
                data: Array2::from_elem((t, 3), 1.0 / 3.0),
            };
            let mut target = Array2::zeros((t, 3));
            target.column_mut(class).fill(1.0);
            let l = bf_model::ce_loss(&p, &target).unwrap();
            worst_ce = worst_ce.max((l - 3f64.ln()).abs());
        }
    }
    let p = BfProbabilities {
        data: array![[0.5, 0.5], [0.25, 0.75]],
    };
    let two_rows = bf_model::ce_loss(&p, &array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let two_rows_err = (two_rows + (0.5f64.ln() + 0.75f64.ln()) / 2.0).abs();

    let j = array![[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]];
    let jh = array![[[0.0, 0.0, 0.0], [0.0, 1.0, 1.0]]];
    let jp_err = (motion_model::jp_loss(&j, &jh).unwrap() - 3.0).abs();
    let a = array![[[0.0, 0.0, 0.0]], [[2.0, 0.0, 0.0]]];
    let b = array![[[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]];
    let dis_err = (motion_model::dis_loss(&a, &b).unwrap() - 0.5).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lambda0_exact = true;
    for _ in 0..20 {
        let x = random3(&mut rng, (6, 4, 3));
        let y = random3(&mut rng, (6, 4, 3));
        let total = motion_model::total_loss(&x, &y, 0.0).unwrap();
        lambda0_exact &= total.to_bits() == motion_model::jp_loss(&x, &y).unwrap().to_bits();
    }
    let pass = worst_ce <= 1e-9 && two_rows_err <= 1e-9 && jp_err <= 1e-9 && dis_err <= 1e-9 && lambda0_exact;
    Verdict::new(
        pass,
        format!(
            "|ce-ln3| {worst_ce:.1e}, two-row ce err {two_rows_err:.1e}, jp err {jp_err:.1e}, dis err {dis_err:.1e}, total(λ=0)≡jp {lambda0_exact}"
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bf = BfNetwork::new(BfBranchConfig::tiny(Feature::Str), 3).unwrap();
    let x = random3(&mut rng, (2, 4, 16));
    let mut targets = Array3::zeros((2, 4, 5));
    for (i, mut row) in targets.rows_mut().into_iter().enumerate() {
        row[(i * 3) % 5] = 1.0;
    }
    let bf_report = check_gradients(
        &mut bf,
        |net, grad| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
            let (probs, cache) = net.forward_batch(&x, &mut Mode::Train(&mut drop_rng)).unwrap();
            let (loss, dlogits) = bf_model::batch_ce(&probs, &targets).unwrap();
            if grad {
                net.backward(&cache, &dlogits);
            }
            loss
        },
        DEFAULT_STEP,
        DEFAULT_FLOOR,
    );

    let schema = SkeletonSchema::tiny();
    let mut motion = MotionNetwork::new(MotionBranchConfig::tiny(), &schema, 7).unwrap();
    let bf_in = random3(&mut rng, (2, 5, 27));
    let mel = random3(&mut rng, (2, 5, 16));
    let gt = random3(&mut rng, (2, 5, 3 * schema.n_joints));
    let motion_report = check_gradients(
        &mut motion,
        |net, grad| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(17);
            let (pred, cache) = net.forward(&bf_in, &mel, &mut Mode::Train(&mut drop_rng)).unwrap();
            let (loss, g) = motion_model::batch_total_loss(&pred, &gt, 0.3).unwrap();
            if grad {
                net.backward(&cache, &g);
            }
            loss
        },
        DEFAULT_STEP,
        DEFAULT_FLOOR,
    );
    let complete = bf_report.checked == bf.num_parameters() && motion_report.checked == motion.num_parameters();
    Verdict::new(
        bf_report.max_rel_error < 1e-4 && motion_report.max_rel_error < 1e-4 && complete,
        format!(
            "classifier max rel err {:.2e} over {} params, motion {:.2e} over {} params",
            bf_report.max_rel_error, bf_report.checked, motion_report.max_rel_error, motion_report.checked
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn dtw_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let group = [0, 1, 2];
    let mut mismatches = 0;
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let th = rng.random_range(1..=6);
        let a = random3(&mut rng, (t, 3, 3));
        let b = random3(&mut rng, (th, 3, 3));
        let fast = metrics::dtw_distance(&a, &b, &group).unwrap();
        let slow = metrics::dtw_oracle(&a, &b, &group).unwrap();
        if fast.to_bits() != slow.to_bits() {
            mismatches += 1;
        }
    }
    Verdict::new(mismatches == 0, format!("{mismatches} mismatches over 200 pairs"))
}

// 4 ------------------------------------------------------------------------

fn random_events(rng: &mut ChaCha8Rng, duration: f64) -> Vec<NoteEvent> {
    let strings = [ViolinString::E, ViolinString::A, ViolinString::D, ViolinString::G];
    let mut events = Vec::new();
    let mut t = rng.random_range(0.0..0.5);
    while t < duration {
        let end = (t + rng.random_range(0.01..1.0)).min(duration);
        if end > t {
            events.push(NoteEvent {
                onset_s: t,
                offset_s: end,
                bow: if rng.random_bool(0.5) { Bow::Up } else { Bow::Down },
                string: strings[rng.random_range(0..4)],
                finger: rng.random_range(1..=5),
                position: rng.random_range(1..=12),
            });
        }
        t = end + if rng.random_bool(0.3) { rng.random_range(0.0..0.4) } else { 0.0 };
    }
    events
}

fn shape_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_row: f64 = 0.0;
    let mut bf_ok = true;
    for i in 0..50 {
        let f = 16 * rng.random_range(1..=8);
        let t = rng.random_range(1..=64);
        let feature = Feature::ALL[i % 4];
        let cfg = BfBranchConfig {
            n_mels: f,
            ..BfBranchConfig::tiny(feature)
        };
        let net = BfNetwork::new(cfg, i as u64).unwrap();
        let mel = Array2::from_shape_simple_fn((t, f), || rng.random_range(-3.0..3.0));
        let p = bf_model::bf_forward(&net, &mel).unwrap();
        bf_ok &= p.data.dim() == (t, feature.n_classes()) && p.data.iter().all(|v| v.is_finite() && *v > 0.0);
        for row in p.data.rows() {
            worst_row = worst_row.max((row.sum() - 1.0).abs());
        }
    }

    let schema = SkeletonSchema::default();
    let net = MotionNetwork::new(MotionBranchConfig::desk(), &schema, 0).unwrap();
    let mut motion_ok = true;
    for t in [1, 17, 300] {
        let bf = Array2::from_shape_simple_fn((t, 27), || rng.random_range(0.0..1.0));
        let mel = Array2::from_shape_simple_fn((t, 128), || rng.random_range(-1.0..1.0));
        let out = motion_model::motion_forward(&net, &bf, &mel, 30.0).unwrap();
        motion_ok &= out.data.dim() == (t, 75, 3) && out.data.iter().all(|v| v.is_finite());
    }

    let mut label_ok = true;
    for _ in 0..1000 {
        let t = rng.random_range(1..=120);
        let events = random_events(&mut rng, t as f64 / 30.0 + 0.2);
        let seq = labels::events_to_frames(&events, 30.0, t);
        for f in Feature::ALL {
            label_ok &= seq.one_hot(f).rows().into_iter().all(|r| r.sum() == 1.0);
        }
        label_ok &= labels::concat_bf(&seq).unwrap().rows().into_iter().all(|r| r.sum() == 4.0);
    }
    Verdict::new(
        bf_ok && worst_row <= 1e-6 && motion_ok && label_ok,
        format!(
            "classifier shapes {bf_ok}, max |row sum-1| {worst_row:.1e}; motion T×75×3 {motion_ok}; label rows 1/4 {label_ok}"
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn jerk_calibration() -> Verdict {
    let frames = |f: &dyn Fn(f64) -> [f64; 3]| metrics::trajectory(&(0..12).map(|t| f(t as f64)).collect::<Vec<_>>());
    let linear = metrics::jerk(&frames(&|t| [0.25 * t, -1.5 * t + 2.0, 3.0 * t])).unwrap();
    let quadratic = metrics::jerk(&frames(&|t| [t * t, 0.5 * t * t - t, 1.0])).unwrap();
    let cubic = metrics::jerk(&frames(&|t| [t * t * t, 0.0, 0.0])).unwrap();
    Verdict::new(
        linear == 0.0 && quadratic == 0.0 && (cubic - 6.0).abs() <= 1e-9,
        format!("linear {linear}, quadratic {quadratic}, cubic {cubic}"),
    )
}

// 6-8 ------------------------------------------------------------------------

/// The 24/4/4-piece, 300-frame synthetic corpus used by the learnability and
/// ablation criteria.
fn desk_corpus() -> (TrainingData, Vec<AlignedSample>) {
    let corpus = generate_corpus(&SynthConfig {
        n_pieces: 32,
        val_pieces: 4,
        test_pieces: 4,
        piece_frames: 300,
        seed: 0,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = corpus.into_prepared().unwrap();
    let (_, _, test) = ds.splits().unwrap();
    (TrainingData::from_prepared(&ds).unwrap(), test)
}

fn desk_config(target: Target, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        patience: 10,
        clip_length: 60,
        clip_hop: if target == Target::Motion { 30 } else { 60 },
        batch_size: 8,
        seed,
        ..TrainConfig::for_target(target)
    }
}

fn bf_learnability() -> Verdict {
    let (data, test) = desk_corpus();
    let arch = Architecture::desk();
    let mut pass = true;
    let mut parts = Vec::new();
    for f in Feature::ALL {
        let out = trainer::train(&desk_config(Target::from_feature(f), 0), &arch, &data, None).unwrap();
        let net = out.checkpoint.bf().unwrap();
        let train_acc = trainer::bf_accuracy(net, f, &data.train, &data.stats).unwrap();
        let test_acc = trainer::bf_accuracy(net, f, &test, &data.stats).unwrap();
        pass &= train_acc >= 0.95 && test_acc >= 0.85;
        parts.push(format!("{} {train_acc:.3}/{test_acc:.3}", f.name()));
    }
    Verdict::new(pass, format!("train/test accuracy: {}", parts.join(", ")))
}

fn motion_learnability() -> Verdict {
    let (data, _) = desk_corpus();
    let out = trainer::train(&desk_config(Target::Motion, 0), &Architecture::desk(), &data, None).unwrap();
    let initial = out.history[0].val_loss;
    let best = out.checkpoint.best_val_loss;
    let reduction = 1.0 - best / initial;
    Verdict::new(
        reduction >= 0.8,
        format!(
            "validation loss {initial:.3} -> {best:.3} (epoch {}), reduction {:.1}%",
            out.checkpoint.epoch,
            100.0 * reduction
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_directions() -> Verdict {
    let (data, test) = desk_corpus();
    let arch = Architecture::desk();
    let schema = SkeletonSchema::default();
    let mut results: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for seed in 0..3 {
        for variant in [Ablation::None, Ablation::NoDis, Ablation::NoStr] {
            let out = trainer::run_ablation(&desk_config(Target::Motion, seed), variant, &arch, &data, None).unwrap();
            let report = pipeline::evaluate_motion_checkpoint(&out.checkpoint, &test, &data.stats, &schema).unwrap();
            let entry = results.entry(variant.name()).or_default();
            entry.0.push(report.mean.l1_all);
            entry.1.push(report.mean.jerk);
        }
    }
    let jerk_full = median(results["none"].1.clone());
    let jerk_no_dis = median(results["no_dis"].1.clone());
    let l1_full = median(results["none"].0.clone());
    let l1_no_str = median(results["no_str"].0.clone());
    Verdict::new(
        jerk_no_dis >= jerk_full && l1_no_str >= l1_full,
        format!(
            "median test jerk no_dis {jerk_no_dis:.5} vs full {jerk_full:.5}; median test L1 no_str {l1_no_str:.4} vs full {l1_full:.4}"
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn small_corpus() -> (TrainingData, violin_motion::dataset::PreparedDataset) {
    let corpus = generate_corpus(&SynthConfig {
        n_pieces: 8,
        val_pieces: 2,
        test_pieces: 2,
        piece_frames: 90,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = corpus.into_prepared().unwrap();
    (TrainingData::from_prepared(&ds).unwrap(), ds)
}

fn quick_config(target: Target) -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        patience: 2,
        clip_length: 30,
        clip_hop: 30,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::for_target(target)
    }
}

fn determinism() -> Verdict {
    let (data, ds) = small_corpus();
    let arch = Architecture::desk();
    let dir = tempfile::tempdir().unwrap();
    let mut train_equal = true;
    let mut ckpts = Vec::new();
    for target in Target::BF.into_iter().chain([Target::Motion]) {
        let a = trainer::train(&quick_config(target), &arch, &data, None).unwrap();
        let b = trainer::train(&quick_config(target), &arch, &data, None).unwrap();
        let last = |o: &trainer::TrainOutcome| o.history.last().unwrap().val_loss.to_bits();
        train_equal &= last(&a) == last(&b)
            && a.checkpoint.best_val_loss.to_bits() == b.checkpoint.best_val_loss.to_bits()
            && a.checkpoint.model.params().checksum() == b.checkpoint.model.params().checksum();
        let path = dir.path().join(format!("{}.ckpt", target.name()));
        a.checkpoint.save(&path).unwrap();
        ckpts.push(path);
    }
    data.stats.save(&dir.path().join("stats.json")).unwrap();
    ds.write(&dir.path().join("data")).unwrap();
    let piece = &ds.split.test[0];
    let features = dir.path().join("data/samples").join(piece).join("features.bin");

    let exe = env!("CARGO_BIN_EXE_violin-motion");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}/{piece}.csv"));
        let run = Command::new(exe)
            .arg("infer")
            .arg("--features")
            .arg(&features)
            .arg("--bf-ckpt")
            .args(&ckpts[..4])
            .arg("--motion-ckpt")
            .arg(&ckpts[4])
            .arg("--preset")
            .arg("desk")
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            run.status.success(),
            "infer exited with {}: {}",
            run.status,
            String::from_utf8_lossy(&run.stderr)
        );
        outputs.push(out);
    }
    let read = |p: &Path| fs::read(p).unwrap();
    let same = |a: &Path, b: &Path| read(a) == read(b);
    let csv_equal = same(&outputs[0], &outputs[1]);
    let side_equal = same(&dataset::sidecar_path(&outputs[0]), &dataset::sidecar_path(&outputs[1]));
    let labels_equal = same(&pipeline::labels_path(&outputs[0]), &pipeline::labels_path(&outputs[1]));
    Verdict::new(
        train_equal && csv_equal && side_equal && labels_equal,
        format!(
            "training bitwise-equal {train_equal}; inference outputs identical: motion {csv_equal}, sidecar {side_equal}, labels {labels_equal}"
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn round_trips() -> Verdict {
    let (data, ds) = small_corpus();
    let stats: &NormalizationStats = &data.stats;
    let mut norm_err: f64 = 0.0;
    for s in &ds.samples {
        let flat = s.motion.flat();
        let back = stats.denormalize_motion(&stats.normalize_motion(&flat).unwrap()).unwrap();
        norm_err = norm_err.max((&back - &flat).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
        let back = stats.denormalize_features(&stats.normalize_features(&s.mel).unwrap()).unwrap();
        norm_err = norm_err.max((&back - &s.mel).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    }

    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture::desk();
    let mut ckpt_err: f64 = 0.0;
    for target in [Target::BfPos, Target::Motion] {
        let out = trainer::train(&quick_config(target), &arch, &data, None).unwrap();
        let path = dir.path().join(format!("{}.ckpt", target.name()));
        out.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let loss = trainer::checkpoint_validation_loss(&loaded, &data).unwrap();
        ckpt_err = ckpt_err.max((loss - out.checkpoint.best_val_loss).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let motion = MotionSequence::new(
        Array3::from_shape_simple_fn((40, 75, 3), || rng.random_range(-2.0..2.0) * 10f64.powi(rng.random_range(-6..3))),
        120.0,
    );
    let meta = MotionMeta {
        fps: 120.0,
        n_joints: 75,
        performer_id: Some("p1".into()),
        synthetic: false,
    };
    let path = dir.path().join("m.csv");
    dataset::write_motion(&path, &motion, &meta).unwrap();
    let (back, back_meta) = dataset::read_motion(&path).unwrap();
    let csv_lossless = back.data == motion.data && back_meta == meta && back.frame_rate == motion.frame_rate;

    Verdict::new(
        norm_err <= 1e-9 && ckpt_err <= 1e-6 && csv_lossless,
        format!(
            "normalization max err {norm_err:.1e}; checkpoint reload loss diff {ckpt_err:.1e}; motion CSV lossless {csv_lossless}"
        ),
    )
}
