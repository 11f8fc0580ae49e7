//! Two-level vector-quantized motion autoencoder: a bottom level at a quarter
//! of the frame rate for poses and a top level at an eighth for movement.

pub mod config;
pub mod loss;
pub mod model;
pub mod quantizer;
pub mod train;

pub use config::{HvqvaeConfig, LossWeights, VqTrainConfig};
pub use loss::{aux_loss, modality_alignment_loss, total_loss, vq_loss, ContactMask, LossValues, Objective, VqInputs};
pub use model::{
    changed_span, DecoderReach, Encoding, ForwardPass, Hvqvae, LatentCodes, LatentFeatures, MotionNorm, BOTTOM_RATE,
    MIN_MOTION_STD, TOP_RATE,
};
pub use quantizer::{nearest_indices, perplexity, Codebook};
pub use train::{encode_windows, model_checkpoint, mpjpe, train_vqvae, EpochLog, TrainingWindows, VqTrainer, HVQVAE_KIND};
