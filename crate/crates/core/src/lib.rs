//! Music-driven dance synthesis: a two-level vector-quantized motion
//! autoencoder, a diffusion prior over its latents, evaluation metrics and
//! latent-code editing.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod fileio;
pub mod hvqvae;
pub mod latent;
pub mod metrics;
pub mod motion;
pub mod music;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision aliases used by the command line and the service.
pub type Motion = motion::MotionSequence<f32>;
pub type MusicFeatures = music::MusicFeatureSequence<f32>;
pub type VqModel = hvqvae::Hvqvae<f32>;
pub type Prior = diffusion::DiffusionPrior<f32>;
pub type Positions = motion::JointPositions<f32>;
