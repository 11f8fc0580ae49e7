//! Diffusion prior over packed continuous latents, conditioned on music.

mod denoiser;
mod generate;
mod latents;
mod sample;
mod schedule;
mod train;

pub use denoiser::{timestep_embedding, Denoise, Denoiser, DenoiserConfig, DiffusionPrior, COND_POOL};
pub use generate::{generate, generate_codes, Generation};
pub use latents::{pack, unpack, LatentStats, MIN_STD};
pub use sample::{ddim_sample, diffusion_training_loss};
pub use schedule::{build_cosine_schedule, NoiseSchedule, BETA_MAX, BETA_MIN, COSINE_OFFSET};
pub use train::{prior_checkpoint, train_prior, LatentCorpus, PriorEpochLog, PriorTrainConfig, PriorTrainer, PRIOR_KIND};
