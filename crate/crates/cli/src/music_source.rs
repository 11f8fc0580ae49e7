//! Music given on the command line or in a request: a click track or a feature file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dancemeld::music::{extract_beats, load_precomputed_features, synth_click_features, BeatTimes, MUSIC_FPS};
use dancemeld::{Error, MusicFeatures, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum MusicSource {
    /// Synthetic click track at this tempo.
    Click(f64),
    /// A `DMFT` feature file.
    File(PathBuf),
}

impl FromStr for MusicSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("click:") {
            Some(bpm) => {
                let bpm: f64 = bpm
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("click tempo {bpm:?} is not a number")))?;
                if !(30.0..=300.0).contains(&bpm) {
                    return Err(Error::InvalidTempo(bpm));
                }
                Ok(Self::Click(bpm))
            }
            None if s.is_empty() => Err(Error::InvalidArgument("empty music source".into())),
            None => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for MusicSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Click(bpm) => write!(f, "click:{bpm}"),
            Self::File(p) => match p.file_stem() {
                Some(stem) => write!(f, "{}", stem.to_string_lossy()),
                None => write!(f, "{}", p.display()),
            },
        }
    }
}

/// Features cut to whole generation windows, with their beats.
#[derive(Clone, Debug)]
pub struct LoadedMusic {
    pub id: String,
    pub features: MusicFeatures,
    pub beats: BeatTimes,
}

/// Loads `source` as `windows` windows of `window` frames. A click track is
/// synthesized at exactly that length; a feature file is truncated to its
/// last whole window, and `windows == 0` keeps every whole window.
pub fn load_music(source: &MusicSource, dim: usize, window: usize, windows: usize, seed: u64) -> Result<LoadedMusic> {
    match source {
        MusicSource::Click(bpm) => {
            let windows = windows.max(1);
            let frames = window * windows;
            let (features, beats) = synth_click_features(*bpm, frames as f64 / MUSIC_FPS as f64, dim, seed)?;
            if features.len() != frames {
                return Err(Error::LengthMismatch(format!(
                    "click track has {} frames, wanted {frames}",
                    features.len()
                )));
            }
            Ok(LoadedMusic {
                id: source.to_string(),
                features,
                beats,
            })
        }
        MusicSource::File(path) => load_file(path, source.to_string(), dim, window, windows),
    }
}

fn load_file(path: &Path, id: String, dim: usize, window: usize, windows: usize) -> Result<LoadedMusic> {
    let all = load_precomputed_features(path)?;
    if all.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: all.dim(),
        });
    }
    let available = all.len() / window;
    if available == 0 {
        return Err(Error::SequenceTooShort {
            need: window,
            got: all.len(),
        });
    }
    let keep = if windows == 0 { available } else { windows };
    if keep > available {
        return Err(Error::SequenceTooShort {
            need: keep * window,
            got: all.len(),
        });
    }
    let features = all.slice(0, keep * window);
    let beats = extract_beats(&features);
    Ok(LoadedMusic { id, features, beats })
}
