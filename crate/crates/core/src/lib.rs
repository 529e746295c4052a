//! Door-world experiments with set-structured latent-variable models.
//!
//! The crate is organised bottom-up:
//!
//! * [`doorworld`] samples doors, renders them through a pinhole camera,
//!   simulates door-opening actions and writes datasets to disk.
//! * [`nets`] holds the hand-written network layers (forward and backward),
//!   the neural statistician and VAE models, Gaussian utilities and
//!   checkpoints.
//! * [`pretrain`] evaluates variational bounds and runs the training loop.
//! * [`latent_eval`] probes pretrained latent spaces (reconstruction,
//!   sampling, z-sweeps).
//! * [`finetune`] and [`bandit`] run the two supervised transfer tasks.

pub mod bandit;
pub mod doorworld;
pub mod error;
pub mod finetune;
pub mod imageio;
pub mod latent_eval;
pub mod nets;
pub mod pretrain;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
