//! Variational bounds and the pretraining loop.

pub mod elbo;
pub mod train;

pub use elbo::{ns_elbo, vae_elbo, ElboTerms, NsNoise, PIXEL_SIGMA};
pub use train::{
    split_doors, train, EpochRecord, History, TrainConfig, TrainOutput, TrainResult, Trainable,
};
