//! Paired motion/music corpus: on-disk manifest, synthetic generator, windowing.

pub mod synth;
pub mod window;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::write_atomic;
use crate::motion::{MotionSequence, Skeleton, DEFAULT_FPS};
use crate::music::{load_precomputed_features, save_features, BeatTimes, MusicFeatureSequence};

pub use synth::{generate_synthetic_corpus, SynthCorpusConfig};
pub use window::{window_iterator, window_starts, Window, WindowSpec};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const BUILTIN_SKELETON: &str = "builtin:humanoid24";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub split: Split,
    pub motion: MotionSequence<f32>,
    pub music: MusicFeatureSequence<f32>,
    pub beats: BeatTimes,
    /// Known for synthetic clips only.
    pub tempo_bpm: Option<f64>,
}

impl MotionClip {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvariantViolation {
                clip: self.id.clone(),
                reason,
            })
        };
        if self.motion.len() != self.music.len() {
            return bad(format!(
                "motion has {} frames, music has {}",
                self.motion.len(),
                self.music.len()
            ));
        }
        if self.motion.fps != DEFAULT_FPS || self.music.fps != DEFAULT_FPS {
            return bad(format!(
                "fps must be {DEFAULT_FPS} (motion {}, music {})",
                self.motion.fps, self.music.fps
            ));
        }
        let duration = self.motion.len() as f64 / DEFAULT_FPS as f64;
        if self.beats.times().iter().any(|&t| t >= duration) {
            return bad("beat time beyond the clip end".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub motion_path: String,
    pub music_path: String,
    pub beats: BeatTimes,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tempo_bpm: Option<f64>,
}

/// JSON manifest; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// `builtin:humanoid24` or a skeleton JSON path.
    pub skeleton: String,
    pub clips: Vec<ClipEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub skeleton: Skeleton,
    pub clips: Vec<MotionClip>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &MotionClip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&MotionClip> {
        self.clips.iter().find(|c| c.id == id)
    }
}

/// Writes motion, music and the manifest under `dir`; returns the manifest path.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let skeleton = if corpus.skeleton == Skeleton::humanoid() {
        BUILTIN_SKELETON.to_string()
    } else {
        let text = serde_json::to_string_pretty(&corpus.skeleton).expect("skeleton serializes");
        write_atomic(&dir.join("skeleton.json"), text.as_bytes())?;
        "skeleton.json".to_string()
    };
    let mut entries = Vec::with_capacity(corpus.clips.len());
    for clip in &corpus.clips {
        clip.validate()?;
        let motion_path = format!("motion/{}.dmmo", clip.id);
        let music_path = format!("music/{}.dmft", clip.id);
        clip.motion.save(&dir.join(&motion_path))?;
        save_features(&dir.join(&music_path), &clip.music)?;
        entries.push(ClipEntry {
            id: clip.id.clone(),
            motion_path,
            music_path,
            beats: clip.beats.clone(),
            split: clip.split,
            tempo_bpm: clip.tempo_bpm,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        skeleton,
        clips: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Loads and validates every clip. Accepts the manifest file or its directory.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let manifest = read_manifest(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let skeleton = if manifest.skeleton == BUILTIN_SKELETON {
        Skeleton::humanoid()
    } else {
        Skeleton::load(&root.join(&manifest.skeleton))?
    };
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for e in &manifest.clips {
        let motion = MotionSequence::load(&root.join(&e.motion_path))?;
        let music = load_precomputed_features(&root.join(&e.music_path))?;
        let clip = MotionClip {
            id: e.id.clone(),
            split: e.split,
            motion,
            music,
            beats: e.beats.clone(),
            tempo_bpm: e.tempo_bpm,
        };
        clip.validate()?;
        clips.push(clip);
    }
    Ok(Corpus { skeleton, clips })
}
