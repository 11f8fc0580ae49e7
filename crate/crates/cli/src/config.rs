//! Training presets and partial JSON overrides.

use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use dancemeld::dataset::WindowSpec;
use dancemeld::diffusion::{DenoiserConfig, PriorTrainConfig};
use dancemeld::hvqvae::{HvqvaeConfig, VqTrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Reduced widths and epoch counts for CPU runs on the synthetic corpus.
    #[default]
    Smoke,
    /// Full-size models and schedules.
    Full,
}

/// Overlays `patch` onto `base`. Objects merge key by key; anything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` with the fields present in the JSON file at `path` replaced.
pub fn with_overrides<C: Serialize + DeserializeOwned>(defaults: &C, path: Option<&Path>) -> anyhow::Result<C> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let mut base = serde_json::to_value(defaults)?;
    merge(&mut base, patch);
    serde_json::from_value(base).with_context(|| format!("config {} does not fit the schema", path.display()))
}

pub const SMOKE_VQ_EPOCHS: usize = 12;
pub const SMOKE_PRIOR_EPOCHS: usize = 10;

pub fn vq_preset(preset: Preset, music_dim: usize) -> VqTrainConfig {
    match preset {
        Preset::Smoke => VqTrainConfig {
            model: HvqvaeConfig::small(music_dim),
            window: WindowSpec { length: 512, stride: 40 },
            epochs: SMOKE_VQ_EPOCHS,
            batch_size: 16,
            lr: 1e-3,
            dead_code_epochs: 1,
            ..VqTrainConfig::default()
        },
        Preset::Full => {
            let mut c = VqTrainConfig::default();
            c.model.music_dim = music_dim;
            c
        }
    }
}

pub fn prior_preset(preset: Preset, code_dim: usize, music_dim: usize) -> PriorTrainConfig {
    match preset {
        Preset::Smoke => PriorTrainConfig {
            denoiser: DenoiserConfig::small(code_dim, music_dim),
            epochs: SMOKE_PRIOR_EPOCHS,
            lr: 1e-3,
            ..PriorTrainConfig::default()
        },
        Preset::Full => {
            let mut c = PriorTrainConfig::default();
            c.denoiser.input_dim = 3 * code_dim;
            c.denoiser.cond_dim = music_dim;
            c
        }
    }
}
