use serde::{Deserialize, Serialize};

use crate::dataset::WindowSpec;
use crate::error::{Error, Result};
use crate::motion::{ContactThresholds, MOTION_DIM};

/// Architecture of the two-level autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HvqvaeConfig {
    pub motion_dim: usize,
    /// Hidden channels of every convolution stack.
    pub width: usize,
    /// Width of both codebooks and of `h_b`, `h_t`.
    pub code_dim: usize,
    pub bottom_codes: usize,
    pub top_codes: usize,
    pub bottom_blocks: usize,
    pub top_blocks: usize,
    pub music_dim: usize,
}

impl Default for HvqvaeConfig {
    fn default() -> Self {
        Self {
            motion_dim: MOTION_DIM,
            width: 512,
            code_dim: 512,
            bottom_codes: 512,
            top_codes: 128,
            bottom_blocks: 2,
            top_blocks: 1,
            music_dim: crate::music::DEFAULT_MUSIC_DIM,
        }
    }
}

impl HvqvaeConfig {
    /// Reduced widths for CPU runs on the synthetic corpus.
    pub fn small(music_dim: usize) -> Self {
        Self {
            width: 64,
            code_dim: 64,
            bottom_codes: 64,
            top_codes: 32,
            music_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.motion_dim != MOTION_DIM {
            return Err(Error::DimMismatch {
                expected: MOTION_DIM,
                got: self.motion_dim,
            });
        }
        if self.width == 0 || self.code_dim == 0 || self.music_dim == 0 {
            return Err(Error::InvalidArgument("widths must be positive".into()));
        }
        if self.bottom_codes < 2 || self.top_codes < 2 {
            return Err(Error::InvalidArgument("codebooks need at least two entries".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Bottom commitment.
    pub alpha: f64,
    /// Top commitment.
    pub beta: f64,
    pub gamma: f64,
    pub phi: f64,
    pub psi: f64,
    pub lambda_aux: f64,
    pub lambda_ma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            beta: 0.02,
            gamma: 1.0,
            phi: 1.0,
            psi: 1.0,
            lambda_aux: 1.0,
            lambda_ma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.phi,
            self.psi,
            self.lambda_aux,
            self.lambda_ma,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn total(&self, vq: f64, aux: f64, ma: f64) -> f64 {
        vq + self.lambda_aux * aux + self.lambda_ma * ma
    }

    pub fn aux(&self, pos: f64, vel: f64, acc: f64, contact: f64) -> f64 {
        pos + self.gamma * vel + self.phi * acc + self.psi * contact
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqTrainConfig {
    pub model: HvqvaeConfig,
    pub weights: LossWeights,
    pub window: WindowSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Codes unused for this many consecutive epochs are re-seeded.
    pub dead_code_epochs: usize,
    pub contacts: ContactThresholds,
    pub clip_norm: Option<f64>,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            model: HvqvaeConfig::default(),
            weights: LossWeights::default(),
            window: WindowSpec::default(),
            epochs: 1000,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            dead_code_epochs: 5,
            contacts: ContactThresholds::default(),
            clip_norm: None,
        }
    }
}
