pub mod audio;
pub mod bf_model;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod motion_model;
pub mod nn;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
