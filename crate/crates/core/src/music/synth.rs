//! Synthetic click-track features with a known beat grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BeatTimes, MusicFeatureSequence, MUSIC_FPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMPULSE_DECAY_FRAMES: f64 = 2.0;
const NOISE_STD: f64 = 0.01;

/// Frame of beat `k` at the given tempo.
pub fn beat_frame(k: usize, bpm: f64) -> usize {
    (k as f64 * 60.0 / bpm * MUSIC_FPS as f64).round() as usize
}

/// Click-track features: an impulse channel group that jumps to 1 on each beat
/// and decays over a few frames, a sin/cos beat-phase pair of constant
/// magnitude, and low-amplitude Gaussian noise on every channel.
pub fn synth_click_features(
    bpm: f64,
    duration_s: f64,
    dim: usize,
    seed: u64,
) -> Result<(MusicFeatureSequence<f32>, BeatTimes)> {
    if !(30.0..=300.0).contains(&bpm) || !bpm.is_finite() {
        return Err(Error::InvalidTempo(bpm));
    }
    if !(duration_s > 0.0) || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_s} s and dim {dim} must be positive"
        )));
    }
    let n = (duration_s * MUSIC_FPS as f64).round().max(1.0) as usize;
    let period = 60.0 / bpm;
    let beats: Vec<usize> = (0..)
        .map(|k| (k, k as f64 * period))
        .take_while(|&(_, t)| t < duration_s - 1e-9)
        .map(|(k, _)| beat_frame(k, bpm))
        .filter(|&f| f < n)
        .collect();

    let group = (dim / 8).clamp(1, 32);
    let phase_ch = if dim >= group + 2 { Some(group) } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut data = vec![0f32; n * dim];
    let mut last_beat = None;
    let mut next = 0;
    for f in 0..n {
        if next < beats.len() && beats[next] == f {
            last_beat = Some(f);
            next += 1;
        }
        let row = &mut data[f * dim..(f + 1) * dim];
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng) as f32;
        }
        if let Some(b) = last_beat {
            let amp = (-((f - b) as f64) / IMPULSE_DECAY_FRAMES).exp();
            for v in &mut row[..group] {
                *v += amp as f32;
            }
        }
        if let Some(c) = phase_ch {
            let phase = 2.0 * std::f64::consts::PI * f as f64 / (MUSIC_FPS as f64 * period);
            row[c] += phase.sin() as f32;
            row[c + 1] += phase.cos() as f32;
        }
    }
    let features = MusicFeatureSequence::new(Tensor::new(&[n, dim], data))?;
    Ok((features, BeatTimes::from_frames(&beats, MUSIC_FPS)))
}
