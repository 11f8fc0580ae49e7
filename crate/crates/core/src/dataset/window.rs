use serde::{Deserialize, Serialize};

use super::MotionClip;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::music::{BeatTimes, MusicFeatureSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length: 512,
            stride: 40,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || !self.length.is_multiple_of(8) {
            return Err(Error::BadLength(self.length));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("window stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// `0, stride, 2 * stride, ...` while the window fits.
pub fn window_starts(n: usize, ws: WindowSpec) -> Result<Vec<usize>> {
    ws.validate()?;
    if n < ws.length {
        return Err(Error::ClipTooShort {
            len: n,
            window: ws.length,
        });
    }
    Ok((0..=(n - ws.length) / ws.stride).map(|k| k * ws.stride).collect())
}

#[derive(Clone, Debug)]
pub struct Window {
    pub clip_id: String,
    pub start: usize,
    pub motion: MotionSequence<f32>,
    pub music: MusicFeatureSequence<f32>,
    /// Beats inside the window, relative to its first frame.
    pub beats: BeatTimes,
}

pub fn window_iterator(clip: &MotionClip, ws: WindowSpec) -> Result<impl Iterator<Item = Window> + '_> {
    let starts = window_starts(clip.len(), ws)?;
    let fps = clip.motion.fps as f64;
    Ok(starts.into_iter().map(move |s| {
        let e = s + ws.length;
        Window {
            clip_id: clip.id.clone(),
            start: s,
            motion: clip.motion.slice(s, e),
            music: clip.music.slice(s, e),
            beats: clip.beats.window(s as f64 / fps, e as f64 / fps),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        let ws = WindowSpec::default();
        assert_eq!(window_starts(512, ws).unwrap(), vec![0]);
        assert_eq!(window_starts(552, ws).unwrap(), vec![0, 40]);
        assert_eq!(window_starts(551, ws).unwrap(), vec![0]);
        assert!(matches!(window_starts(511, ws), Err(Error::ClipTooShort { .. })));
    }
}
