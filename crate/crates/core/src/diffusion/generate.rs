//! Music to motion: sample latents, quantize, decode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::denoiser::{DiffusionPrior, COND_POOL};
use super::latents::unpack;
use super::sample::ddim_sample;
use crate::error::{Error, Result};
use crate::hvqvae::{Hvqvae, LatentCodes};
use crate::motion::MotionSequence;
use crate::music::MusicFeatureSequence;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Generation<T> {
    pub motion: MotionSequence<T>,
    pub codes: LatentCodes,
}

fn check_pair<T: Scalar>(vq: &Hvqvae<T>, prior: &DiffusionPrior<T>) -> Result<()> {
    if prior.config.input_dim != 3 * vq.config.code_dim {
        return Err(Error::DimMismatch {
            expected: 3 * vq.config.code_dim,
            got: prior.config.input_dim,
        });
    }
    if prior.config.cond_dim != vq.config.music_dim {
        return Err(Error::DimMismatch {
            expected: vq.config.music_dim,
            got: prior.config.cond_dim,
        });
    }
    Ok(())
}

/// Latent codes for `music`, one independent window after another.
pub fn generate_codes<T: Scalar>(
    music: &MusicFeatureSequence<T>,
    vq: &Hvqvae<T>,
    prior: &DiffusionPrior<T>,
    num_steps: usize,
    seed: u64,
) -> Result<LatentCodes> {
    check_pair(vq, prior)?;
    if music.dim() != prior.config.cond_dim {
        return Err(Error::DimMismatch {
            expected: prior.config.cond_dim,
            got: music.dim(),
        });
    }
    let window = prior.config.window_frames();
    if music.is_empty() || !music.len().is_multiple_of(window) {
        return Err(Error::LengthMismatch(format!(
            "music has {} frames, expected a positive multiple of {window}",
            music.len()
        )));
    }
    let windows = music.len() / window;
    let (l, c) = (prior.config.seq_len, prior.config.input_dim);
    let cond = Tensor::stack(
        &(0..windows)
            .map(|w| music.slice(w * window, (w + 1) * window).pooled(COND_POOL))
            .collect::<Vec<_>>(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = ddim_sample(&prior.schedule, prior, &cond, &[windows, l, c], num_steps, &mut rng)?;
    let mut codes = LatentCodes {
        top: Vec::new(),
        bottom: Vec::new(),
    };
    for h in sampled.unstack() {
        let h = prior.stats.destandardize(&h)?;
        let (h_b_prime, h_t) = unpack(&h, vq.config.code_dim)?;
        let (top, _) = vq.quantize_top(&h_t)?;
        let (bottom, _) = vq.quantize_bottom(&h_b_prime)?;
        codes.top.extend(top);
        codes.bottom.extend(bottom);
    }
    Ok(codes)
}

/// Decoded motion and the codes it came from; `motion` equals
/// `vq.decode_codes(&codes)`.
pub fn generate<T: Scalar>(
    music: &MusicFeatureSequence<T>,
    vq: &Hvqvae<T>,
    prior: &DiffusionPrior<T>,
    num_steps: usize,
    seed: u64,
) -> Result<Generation<T>> {
    let codes = generate_codes(music, vq, prior, num_steps, seed)?;
    let motion = vq.decode_codes(&codes)?;
    Ok(Generation { motion, codes })
}
