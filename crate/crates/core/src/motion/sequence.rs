use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio::{self, MatrixFile};
use crate::motion::rotation::IDENTITY_6D;
use crate::motion::skeleton::JOINT_COUNT;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Root translation (3) + 24 joints x 6D rotation.
pub const MOTION_DIM: usize = 3 + JOINT_COUNT * 6;
pub const DEFAULT_FPS: u32 = 60;

pub const MOTION_MAGIC: &[u8; 4] = b"DMMO";

/// `N x 147` frames at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence<T> {
    frames: Tensor<T>,
    pub fps: u32,
}

impl<T: Scalar> MotionSequence<T> {
    pub fn new(frames: Tensor<T>, fps: u32) -> Result<Self> {
        if frames.ndim() != 2 || frames.shape()[1] != MOTION_DIM {
            return Err(Error::ShapeMismatch(format!(
                "motion must be [N, {MOTION_DIM}], got {:?}",
                frames.shape()
            )));
        }
        Ok(Self { frames, fps })
    }

    /// Rest pose (identity rotations) at the given translation for `n` frames.
    pub fn rest(n: usize, translation: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(n * MOTION_DIM);
        for _ in 0..n {
            data.extend(translation.iter().map(|&v| T::lit(v)));
            for _ in 0..JOINT_COUNT {
                data.extend(IDENTITY_6D.iter().map(|&v| T::lit(v)));
            }
        }
        Self {
            frames: Tensor::new(&[n, MOTION_DIM], data),
            fps: DEFAULT_FPS,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<T> {
        self.frames
    }

    pub fn frame(&self, i: usize) -> &[T] {
        self.frames.row(i)
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [T] {
        self.frames.row_mut(i)
    }

    pub fn translation(&self, i: usize) -> [T; 3] {
        let f = self.frame(i);
        [f[0], f[1], f[2]]
    }

    pub fn rot6d(&self, i: usize, joint: usize) -> [T; 6] {
        let f = self.frame(i);
        let o = 3 + joint * 6;
        [f[o], f[o + 1], f[o + 2], f[o + 3], f[o + 4], f[o + 5]]
    }

    pub fn set_rot6d(&mut self, i: usize, joint: usize, r: [T; 6]) {
        let o = 3 + joint * 6;
        self.frame_mut(i)[o..o + 6].copy_from_slice(&r);
    }

    pub fn set_translation(&mut self, i: usize, t: [T; 3]) {
        self.frame_mut(i)[..3].copy_from_slice(&t);
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            frames: self.frames.slice_first(start, end),
            fps: self.fps,
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut data = self.frames.data().to_vec();
        data.extend_from_slice(other.frames.data());
        Self {
            frames: Tensor::new(&[self.len() + other.len(), MOTION_DIM], data),
            fps: self.fps,
        }
    }

    /// Adds a constant offset to every frame's root translation.
    pub fn translated(&self, offset: [T; 3]) -> Self {
        let mut out = self.clone();
        for i in 0..out.len() {
            let t = out.translation(i);
            out.set_translation(i, [t[0] + offset[0], t[1] + offset[1], t[2] + offset[2]]);
        }
        out
    }

    /// Moves the first frame's root onto the vertical axis (x = z = 0).
    pub fn centered(&self) -> Self {
        if self.is_empty() {
            return self.clone();
        }
        let t = self.translation(0);
        self.translated([-t[0], T::zero(), -t[2]])
    }

    /// Reads a `DMMO` file.
    pub fn load(path: &Path) -> Result<Self> {
        let m = fileio::read_matrix(MOTION_MAGIC, path)?;
        if m.cols != MOTION_DIM {
            return Err(Error::Format(format!(
                "{}: motion width {} != {MOTION_DIM}",
                path.display(),
                m.cols
            )));
        }
        let data = m.data.iter().map(|&v| T::lit(v as f64)).collect();
        Self::new(Tensor::new(&[m.rows, m.cols], data), m.fps)
    }

    /// Writes a `DMMO` file (f32 payload) atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = MatrixFile {
            rows: self.len(),
            cols: MOTION_DIM,
            fps: self.fps,
            data: self.frames.data().iter().map(|v| v.as_f64() as f32).collect(),
        };
        fileio::write_matrix(MOTION_MAGIC, path, &file)
    }

    pub fn cast<U: Scalar>(&self) -> MotionSequence<U> {
        MotionSequence {
            frames: self.frames.cast(),
            fps: self.fps,
        }
    }
}

/// Forward difference along the first axis: `out[i] = x[i + 1] - x[i]`.
pub fn temporal_difference<T: Scalar>(series: &Tensor<T>) -> Result<Tensor<T>> {
    let n = series.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::SequenceTooShort { need: 2, got: n });
    }
    let d = series.len() / n;
    let src = series.data();
    let out: Vec<T> = (0..(n - 1) * d).map(|k| src[k + d] - src[k]).collect();
    let mut shape = series.shape().to_vec();
    shape[0] = n - 1;
    Ok(Tensor::new(&shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_is_147() {
        assert_eq!(MOTION_DIM, 147);
        let bad = Tensor::<f32>::zeros(&[4, 146]);
        assert!(MotionSequence::new(bad, 60).is_err());
    }

    #[test]
    fn difference_of_cumulative_series() {
        let s = Tensor::<f64>::new(&[4, 1], vec![0.0, 1.0, 3.0, 6.0]);
        assert_eq!(temporal_difference(&s).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_series_has_zero_difference() {
        let s = Tensor::<f64>::full(&[5, 3], 2.5);
        assert!(temporal_difference(&s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_difference_of_ramp_vanishes() {
        let s = Tensor::<f64>::new(&[5, 2], (0..10).map(|i| (i / 2) as f64 * 0.5 + (i % 2) as f64).collect());
        let v = temporal_difference(&s).unwrap();
        let a = temporal_difference(&v).unwrap();
        assert!(a.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_frame_is_too_short() {
        let s = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            temporal_difference(&s),
            Err(Error::SequenceTooShort { need: 2, got: 1 })
        ));
    }
}
