use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use violin_motion::checkpoint::Checkpoint;
use violin_motion::dataset::NormalizationStats;
use violin_motion::pipeline::{self, BfEnsemble, ExperimentConfig, InferenceInput};
use violin_motion::skeleton::SkeletonSchema;
use violin_motion::synth::SynthConfig;
use violin_motion::trainer::{Ablation, Target};
use violin_motion::{Error, Result};

#[derive(Parser)]
#[command(name = "violin-motion", version, about = "Violin performance motion from audio")]
struct Cli {
    /// Seed for training, dropout and shuffling (default 0); overrides the
    /// generator seed of `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads for per-piece parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(match self.preset {
                Preset::Full => ExperimentConfig::default(),
                Preset::Desk => ExperimentConfig::desk(),
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract features, rasterize labels and cache aligned samples.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one classifier or the motion model.
    Train {
        /// bow, str, fing, pos or motion.
        #[arg(long, value_parser = parse_target)]
        target: Target,
        #[command(flatten)]
        config: ConfigArgs,
        /// Prepared dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for the checkpoint, log and statistics.
        #[arg(long)]
        out: PathBuf,
        /// Run directory holding the four classifiers (motion with predicted labels).
        #[arg(long)]
        bf_dir: Option<PathBuf>,
    },
    /// Train the motion model under an ablation variant.
    Ablate {
        /// none, no_bow, no_str, no_fing, no_pos, single_branch or no_dis.
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bf_dir: Option<PathBuf>,
    },
    /// Generate motion for one recording.
    Infer {
        /// WAV input.
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        audio: Option<PathBuf>,
        /// Cached feature matrix (`features.bin` with its sidecar).
        #[arg(long)]
        features: Option<PathBuf>,
        /// The four classifier checkpoints, in any order.
        #[arg(long = "bf-ckpt", num_args = 1.., required = true)]
        bf_ckpt: Vec<PathBuf>,
        #[arg(long)]
        motion_ckpt: PathBuf,
        /// Normalization statistics (default: stats.json beside the motion checkpoint).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Motion CSV to write; decoded labels go to `<stem>.labels.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted motion against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<piece>.csv` files or a prepared dataset.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Normalization statistics; when given, metrics are computed in
        /// normalized coordinates.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-metric SVG plots.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Write a synthetic corpus as a prepared dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_target(s: &str) -> std::result::Result<Target, String> {
    Target::parse(s).ok_or_else(|| format!("unknown target `{s}` (bow, str, fing, pos, motion)"))
}

fn load_schema(path: Option<&Path>) -> Result<SkeletonSchema> {
    path.map_or_else(|| Ok(SkeletonSchema::default()), SkeletonSchema::load)
}

fn report_run(run: &pipeline::RunArtifacts) {
    println!(
        "best epoch {} with validation loss {:.6}; checkpoint {}",
        run.outcome.checkpoint.epoch,
        run.outcome.checkpoint.best_val_loss,
        run.checkpoint.display()
    );
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Prepare { corpus, config, out } => {
            let ds = pipeline::prepare(&corpus, &config.load()?, &out)?;
            println!(
                "cached {} pieces ({} train / {} val / {} test) in {}",
                ds.samples.len(),
                ds.split.train.len(),
                ds.split.val.len(),
                ds.split.test.len(),
                out.display()
            );
        }
        Command::Train {
            target,
            config,
            data,
            out,
            bf_dir,
        } => {
            let run = pipeline::train_target(&config.load()?, &data, target, seed, &out, bf_dir.as_deref())?;
            report_run(&run);
        }
        Command::Ablate {
            variant,
            config,
            data,
            out,
            bf_dir,
        } => {
            let variant = Ablation::parse(&variant)?;
            let run = pipeline::ablate(&config.load()?, &data, variant, seed, &out, bf_dir.as_deref())?;
            report_run(&run);
        }
        Command::Infer {
            audio,
            features,
            bf_ckpt,
            motion_ckpt,
            stats,
            config,
            out,
        } => {
            let input = match (audio, features) {
                (Some(a), _) => InferenceInput::Audio(a),
                (None, Some(f)) => InferenceInput::Features(f),
                (None, None) => return Err(Error::Missing("--audio or --features".into())),
            };
            let stats_path = stats.unwrap_or_else(|| motion_ckpt.with_file_name("stats.json"));
            if !stats_path.is_file() {
                return Err(Error::Missing(format!(
                    "normalization statistics {} (pass --stats)",
                    stats_path.display()
                )));
            }
            let ensemble = BfEnsemble::load(&bf_ckpt)?;
            let motion = Checkpoint::load(&motion_ckpt)?;
            let stats = NormalizationStats::load(&stats_path)?;
            let result = pipeline::infer(&config.load()?, &input, &ensemble, &motion, &stats)?;
            pipeline::write_inference(&result, &out)?;
            println!("wrote {} frames to {}", result.motion.frames(), out.display());
        }
        Command::Evaluate {
            pred,
            gt,
            schema,
            stats,
            out,
            plots,
        } => {
            let schema = load_schema(schema.as_deref())?;
            let stats = stats.as_deref().map(NormalizationStats::load).transpose()?;
            let report = pipeline::evaluate_dirs(&pred, &gt, &schema, stats.as_ref(), &out, plots.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Synth { config, schema, out } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::MalformedFile {
                        path: p.clone(),
                        reason: e.to_string(),
                    })?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let ds = pipeline::write_synth(&cfg, &load_schema(schema.as_deref())?, &out)?;
            println!("wrote {} synthetic pieces to {}", ds.samples.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
