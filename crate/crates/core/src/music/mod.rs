//! Per-frame music conditioning features and beat times.

pub mod beats;
pub mod encoder;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::{self, MatrixFile};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use beats::extract_beats;
pub use encoder::{encode_music, MusicEncoder, POOL_FACTOR};
pub use synth::synth_click_features;

pub const FEATURE_MAGIC: &[u8; 4] = b"DMFT";
pub const MUSIC_FPS: u32 = 60;
/// Width of the precomputed features the full-size model expects.
pub const DEFAULT_MUSIC_DIM: usize = 4800;

/// `N_m x D_m` features at 60 fps.
#[derive(Clone, Debug, PartialEq)]
pub struct MusicFeatureSequence<T> {
    features: Tensor<T>,
    pub fps: u32,
}

impl<T: Scalar> MusicFeatureSequence<T> {
    pub fn new(features: Tensor<T>) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "music features must be [N, D], got {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("music features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            fps: MUSIC_FPS,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn frame(&self, i: usize) -> &[T] {
        self.features.row(i)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            features: self.features.slice_first(start, end),
            fps: self.fps,
        }
    }

    pub fn cast<U: Scalar>(&self) -> MusicFeatureSequence<U> {
        MusicFeatureSequence {
            features: self.features.cast(),
            fps: self.fps,
        }
    }

    /// Average-pools `factor` consecutive frames; the tail is edge-padded.
    pub fn pooled(&self, factor: usize) -> Tensor<T> {
        let n = self.len();
        let d = self.dim();
        let out_len = n.div_ceil(factor);
        let mut out = vec![T::zero(); out_len * d];
        let inv = T::one() / T::from_usize_lossy(factor);
        for o in 0..out_len {
            let row = &mut out[o * d..(o + 1) * d];
            for k in 0..factor {
                let src = (o * factor + k).min(n - 1);
                for (r, &v) in row.iter_mut().zip(self.features.row(src)) {
                    *r += v * inv;
                }
            }
        }
        Tensor::new(&[out_len, d], out)
    }
}

/// Ascending beat times in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeatTimes {
    beats: Vec<f64>,
}

impl BeatTimes {
    pub fn new(beats: Vec<f64>) -> Result<Self> {
        if beats.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidArgument("beat times must be finite and non-negative".into()));
        }
        if beats.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("beat times must be strictly increasing".into()));
        }
        Ok(Self { beats })
    }

    pub fn from_frames(frames: &[usize], fps: u32) -> Self {
        Self {
            beats: frames.iter().map(|&f| f as f64 / fps as f64).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.beats
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Nearest frame index of each beat.
    pub fn frames(&self, fps: u32) -> Vec<usize> {
        self.beats.iter().map(|t| (t * fps as f64).round() as usize).collect()
    }

    /// Beats inside `[start, end)` seconds, re-based to `start`.
    pub fn window(&self, start: f64, end: f64) -> Self {
        Self {
            beats: self
                .beats
                .iter()
                .filter(|&&t| t >= start && t < end)
                .map(|t| t - start)
                .collect(),
        }
    }
}

pub fn load_precomputed_features(path: &Path) -> Result<MusicFeatureSequence<f32>> {
    let m = fileio::read_matrix(FEATURE_MAGIC, path)?;
    if m.fps != MUSIC_FPS {
        return Err(Error::Format(format!("feature file at {} fps, expected {MUSIC_FPS}", m.fps)));
    }
    MusicFeatureSequence::new(Tensor::new(&[m.rows, m.cols], m.data)).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_features<T: Scalar>(path: &Path, m: &MusicFeatureSequence<T>) -> Result<()> {
    let file = MatrixFile {
        rows: m.len(),
        cols: m.dim(),
        fps: m.fps,
        data: m.features.data().iter().map(|v| v.as_f64() as f32).collect(),
    };
    fileio::write_matrix(FEATURE_MAGIC, path, &file)
}
