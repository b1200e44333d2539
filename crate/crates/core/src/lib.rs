//! Bone suppression for chest radiographs by latent consistency sampling.
//!
//! An image is encoded to a latent, sampled twice (conditioned on the full
//! radiograph and on the lung region), decoded, and the two results are
//! merged by Poisson fusion inside the lung mask. Every swappable piece
//! (codec, noise estimator, update rule, mask provider, fusion) is a trait
//! object registered by name in [`registry`].

pub mod codec;
pub mod denoiser;
pub mod error;
pub mod fusion;
pub mod image;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod sampler;
pub mod scheduler;
pub mod segmentation;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use latent::Latent;
