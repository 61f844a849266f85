//! Synthetic worlds, experts and reference oracles for exercising the
//! pipeline end to end with known ground truth.

mod bench;
mod oracle;
mod world;

use thiserror::Error;

pub use bench::*;
pub use oracle::*;
pub use world::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("`{0}` is not a leaf class of the world")]
    UnknownClass(String),
    #[error("instance too large for the grid oracle: {0}")]
    InstanceTooLarge(String),
    #[error("requested {requested} samples per node, world stores {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("pipeline step failed: {0}")]
    Pipeline(String),
}
