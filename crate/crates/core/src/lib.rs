//! Paired two-domain image translation with adversarial, cycle, synthesized
//! and perceptual losses.
//!
//! Two residual generators (`G_V: T -> V`, `G_T: V -> T`) are trained against
//! two 70x70 PatchGAN discriminators. The generator objective is a weighted
//! sum of ten terms; see [`losses`] and [`config::LossWeights`].

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod training;

pub use config::{load_config, preset_loss_mask, LossTerm, LossWeights, MethodPreset, TrainConfig};
pub use error::{Error, Result};
