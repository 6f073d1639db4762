//! Sparse recurrent spiking network with local three-factor learning.
//!
//! Layers of leaky integrate-and-fire neurons are wired by banded recurrent
//! connectivity plus random shortcuts, read out through sparse projections,
//! and trained with eligibility traces gated by a small modulatory
//! population that receives a fixed random broadcast of the output error.

pub mod config;
pub mod dataio;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod plasticity;
pub mod rng;
pub mod topology;
pub mod trainer;

pub use config::Config;
pub use dataio::{load_mnist, Checkpoint, Dataset, EpochMetrics};
pub use error::{Result, SnnError};
pub use trainer::{evaluate, run_forward, Model, TrainOptions, Trainer};
