//! Checkpoint files.
//!
//! A checkpoint is a single JSON header line followed by the raw tensors of
//! the network. The header records the version key (`bf_ckpt_version` or
//! `motion_ckpt_version`), the model and training configuration, the epoch
//! and validation loss of the kept parameters, the RNG state, the hashes of
//! the feature settings and normalization statistics, the joint schema (motion
//! only) and a table of tensor names and shapes. The body stores each tensor
//! in that order as little-endian `f64` values, row-major. Batch-norm running
//! statistics are stored like any other tensor.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bf_model::{BfBranchConfig, BfNetwork};
use crate::error::{Error, Result};
use crate::motion_model::{MotionBranchConfig, MotionNetwork};
use crate::skeleton::SkeletonSchema;
use crate::trainer::{Model, TrainConfig};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Trained parameters with everything needed to reuse them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub rng_seed: u64,
    /// Position of the training RNG stream when the parameters were kept.
    pub rng_word_pos: u128,
    pub feature_hash: String,
    pub stats_hash: String,
    pub schema: Option<SkeletonSchema>,
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self.model {
            Model::Bf { .. } => "bf",
            Model::Motion(_) => "motion",
        }
    }

    pub fn bf(&self) -> Option<&BfNetwork> {
        match &self.model {
            Model::Bf { net, .. } => Some(net),
            Model::Motion(_) => None,
        }
    }

    pub fn motion(&self) -> Option<&MotionNetwork> {
        match &self.model {
            Model::Motion(net) => Some(net),
            Model::Bf { .. } => None,
        }
    }

    fn tensor_table(&self) -> Vec<TensorEntry> {
        let mut table = Vec::new();
        self.model.params().visit("", &mut |name, p| {
            table.push(TensorEntry {
                name: name.to_string(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
        });
        table
    }

    fn header(&self) -> Value {
        let model_config = match &self.model {
            Model::Bf { net, .. } => serde_json::to_value(net.config()),
            Model::Motion(net) => serde_json::to_value(net.config()),
        }
        .expect("configs serialize");
        json!({
            format!("{}_ckpt_version", self.kind()): CHECKPOINT_VERSION,
            "kind": self.kind(),
            "model_config": model_config,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "rng": { "seed": self.rng_seed, "word_pos": self.rng_word_pos.to_string() },
            "feature_hash": self.feature_hash,
            "stats_hash": self.stats_hash,
            "schema": self.schema,
            "tensors": self.tensor_table(),
        })
    }

    pub fn write_to(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let header = serde_json::to_string(&self.header()).expect("header serializes");
        writeln!(w, "{header}")?;
        let mut bytes = Vec::new();
        self.model.params().visit("", &mut |_, p| {
            for v in p.value.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        w.write_all(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut file)
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), path)
    }

    pub fn read_from(r: &mut dyn BufRead, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::malformed(path, reason);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: Value = serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
        let kind = header["kind"].as_str().ok_or_else(|| bad("missing `kind`".into()))?.to_string();
        let version_key = format!("{kind}_ckpt_version");
        match header[&version_key].as_u64() {
            Some(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(bad(format!("unsupported {version_key} {v}"))),
            None => return Err(bad(format!("missing `{version_key}`"))),
        }
        let field = |name: &str| -> Result<Value> {
            header.get(name).cloned().ok_or_else(|| bad(format!("missing `{name}`")))
        };
        let train_config: TrainConfig =
            serde_json::from_value(field("train_config")?).map_err(|e| bad(format!("train_config: {e}")))?;
        let schema: Option<SkeletonSchema> =
            serde_json::from_value(field("schema")?).map_err(|e| bad(format!("schema: {e}")))?;
        let mut model = match kind.as_str() {
            "bf" => {
                let cfg: BfBranchConfig = serde_json::from_value(field("model_config")?)
                    .map_err(|e| bad(format!("model_config: {e}")))?;
                let feature = train_config
                    .target
                    .feature()
                    .ok_or_else(|| bad("classifier checkpoint with motion target".into()))?;
                Model::Bf {
                    feature,
                    net: BfNetwork::new(cfg, train_config.seed)?,
                }
            }
            "motion" => {
                let cfg: MotionBranchConfig = serde_json::from_value(field("model_config")?)
                    .map_err(|e| bad(format!("model_config: {e}")))?;
                let schema = schema.as_ref().ok_or_else(|| bad("motion checkpoint without schema".into()))?;
                Model::Motion(MotionNetwork::new(cfg, schema, train_config.seed)?)
            }
            other => return Err(bad(format!("unknown kind `{other}`"))),
        };
        let table: Vec<TensorEntry> =
            serde_json::from_value(field("tensors")?).map_err(|e| bad(format!("tensors: {e}")))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let expected: usize = table.iter().map(|t| t.rows * t.cols).sum();
        if body.len() != expected * 8 {
            return Err(bad(format!("body holds {} bytes, expected {}", body.len(), expected * 8)));
        }

        let mut offset = 0usize;
        let mut index = 0usize;
        let mut failure = None;
        model.params_mut().visit_mut("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            let Some(entry) = table.get(index) else {
                failure = Some(format!("tensor `{name}` missing from the table"));
                return;
            };
            index += 1;
            if entry.name != name || entry.rows != p.value.nrows() || entry.cols != p.value.ncols() {
                failure = Some(format!(
                    "tensor `{}` ({}x{}) does not match `{name}` ({}x{})",
                    entry.name,
                    entry.rows,
                    entry.cols,
                    p.value.nrows(),
                    p.value.ncols()
                ));
                return;
            }
            for v in p.value.iter_mut() {
                let chunk: [u8; 8] = body[offset..offset + 8].try_into().expect("8-byte chunk");
                *v = f64::from_le_bytes(chunk);
                offset += 8;
            }
        });
        if let Some(reason) = failure {
            return Err(bad(reason));
        }
        if index != table.len() {
            return Err(bad(format!("table lists {} tensors, network has {index}", table.len())));
        }

        fn num<T: serde::de::DeserializeOwned>(header: &Value, name: &str, path: &Path) -> Result<T> {
            header
                .get(name)
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| Error::malformed(path, format!("missing or invalid `{name}`")))
        }
        let rng = field("rng")?;
        Ok(Checkpoint {
            model,
            train_config,
            epoch: num(&header, "epoch", path)?,
            best_val_loss: num(&header, "best_val_loss", path)?,
            rng_seed: rng["seed"].as_u64().ok_or_else(|| bad("rng.seed".into()))?,
            rng_word_pos: rng["word_pos"]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("rng.word_pos".into()))?,
            feature_hash: num(&header, "feature_hash", path)?,
            stats_hash: num(&header, "stats_hash", path)?,
            schema,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Feature;
    use crate::trainer::{Architecture, Target};

    fn checkpoint(target: Target) -> Checkpoint {
        let arch = Architecture::desk();
        let train_config = TrainConfig::for_target(target);
        let model = Model::build(&train_config, &arch, 5).unwrap();
        Checkpoint {
            model,
            train_config,
            epoch: 3,
            best_val_loss: 0.125,
            rng_seed: 5,
            rng_word_pos: 1 << 70,
            feature_hash: "f".into(),
            stats_hash: "s".into(),
            schema: (target == Target::Motion).then(SkeletonSchema::default),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for target in [Target::BfFing, Target::Motion] {
            let ck = checkpoint(target);
            let path = dir.path().join(format!("{}.ckpt", target.name()));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back.model.params().checksum(), ck.model.params().checksum());
            assert_eq!(back.train_config, ck.train_config);
            assert_eq!(back.epoch, 3);
            assert_eq!(back.rng_word_pos, 1 << 70);
            assert_eq!(back.schema, ck.schema);
            let text = fs::read(&path).unwrap();
            let first = text.split(|&b| b == b'\n').next().unwrap();
            let key = format!("\"{}_ckpt_version\":1", ck.kind());
            assert!(String::from_utf8_lossy(first).contains(&key));
        }
        assert!(matches!(checkpoint(Target::BfFing).model, Model::Bf { feature: Feature::Fing, .. }));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        checkpoint(Target::BfBow).save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::MalformedFile { .. })));
        fs::write(&path, b"{\"kind\":\"bf\",\"bf_ckpt_version\":9}\n").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::MalformedFile { .. })));
    }
}
