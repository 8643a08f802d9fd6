use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("audio lasts {audio_s:.3} s but motion lasts {motion_s:.3} s (tolerance {tolerance_s} s)")]
    DurationMismatch {
        audio_s: f64,
        motion_s: f64,
        tolerance_s: f64,
    },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("sequence too short: {0}")]
    TooShort(String),

    #[error("sequence too long for exhaustive search: {0}")]
    TooLong(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("annotation schema error: {0}")]
    Schema(String),

    #[error("overlapping note events at {first_onset_s} s and {second_onset_s} s")]
    Overlap {
        first_onset_s: f64,
        second_onset_s: f64,
    },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("split is empty: {0}")]
    EmptySplit(String),

    #[error("unknown piece id `{0}`")]
    UnknownPieceId(String),

    #[error("piece `{0}` is not assigned to any split")]
    UnassignedPiece(String),

    #[error("piece `{0}` appears in more than one split")]
    OverlappingSplits(String),

    #[error("joint group `{0}` is empty")]
    EmptyGroup(String),

    #[error("piece sets differ: {0}")]
    PieceMismatch(String),

    #[error("invalid ablation variant: {0}")]
    InvalidVariant(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("{count} piece(s) failed to load:\n{table}")]
    Corpus { count: usize, table: String },

    #[error("missing input: {0}")]
    Missing(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Divergence { .. } | Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
