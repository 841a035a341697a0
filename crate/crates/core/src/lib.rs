//! Stochastic surrogate models: a latent-variable encoder/decoder whose
//! decoder integrates a learned derivative field, its fully connected
//! baseline, exact Gaussian processes, datasets and evaluation metrics.

pub mod baselines;
pub mod data;
pub mod decoders;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod npmodel;
pub mod training;

pub use decoders::{DecoderKind, OdeSolverConfig, PredictiveDistribution};
pub use error::{Error, Result};
pub use model::{ModelConfig, NpModel};
pub use training::{Checkpoint, TrainConfig};
