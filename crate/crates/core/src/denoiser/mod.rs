//! Noise estimators `eps_theta(z_t, t, z_cond)` and their training.

mod checkpoint;
mod conv;
mod oracle;
mod toy;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use oracle::OracleDenoiser;
pub use toy::{Architecture, LayerSpec, ToyDenoiser, ZeroDenoiser};
pub use train::{
    noise_loss, evaluation_items, gradient_check, noised_items, train, train_step, NoisedItem,
    TrainOptions, TrainPair, TrainReport, Trainable,
};

use crate::error::Result;
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionKind {
    Global,
    Local,
}

impl ConditionKind {
    /// Value of the constant flag channel the toy networks receive.
    pub fn flag(self) -> f64 {
        match self {
            ConditionKind::Global => 0.0,
            ConditionKind::Local => 1.0,
        }
    }
}

/// Encoded conditioning image, concatenated to `z_t` along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub latent: Latent,
    pub kind: ConditionKind,
}

impl Condition {
    pub fn global(latent: Latent) -> Self {
        Self {
            latent,
            kind: ConditionKind::Global,
        }
    }

    pub fn local(latent: Latent) -> Self {
        Self {
            latent,
            kind: ConditionKind::Local,
        }
    }
}

pub trait NoiseEstimator: Send + Sync {
    fn name(&self) -> String;

    /// Predicted noise, same shape as `z_t`, for `1 <= t <= T`.
    fn predict_noise(&self, z_t: &Latent, t: usize, cond: &Condition) -> Result<Latent>;
}

impl<N: NoiseEstimator + ?Sized> NoiseEstimator for Box<N> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict_noise(&self, z_t: &Latent, t: usize, cond: &Condition) -> Result<Latent> {
        (**self).predict_noise(z_t, t, cond)
    }
}
