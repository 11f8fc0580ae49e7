//! Fix/vary studies and decoding of edited codes.

use super::edit::{apply_ops, CodebookSizes, EditOp};
use crate::error::{Error, Result};
use crate::hvqvae::{Hvqvae, LatentCodes};
use crate::metrics::mean_joint_speed;
use crate::motion::{forward_kinematics, MotionSequence, Skeleton};
use crate::scalar::Scalar;

impl<T: Scalar> Hvqvae<T> {
    pub fn codebook_sizes(&self) -> CodebookSizes {
        CodebookSizes {
            top: self.config.top_codes,
            bottom: self.config.bottom_codes,
        }
    }
}

/// Edited codes and their decoded motion.
pub fn apply_edits<T: Scalar>(
    codes: &LatentCodes,
    ops: &[EditOp],
    vq: &Hvqvae<T>,
) -> Result<(LatentCodes, MotionSequence<T>)> {
    let edited = apply_ops(codes, ops, vq.codebook_sizes())?;
    let motion = vq.decode_codes(&edited)?;
    Ok((edited, motion))
}

/// Mean over frames and joints of the spread of joint positions across
/// samples: the mean squared distance to the per-frame, per-joint centroid.
pub fn dispersion<T: Scalar>(motions: &[MotionSequence<T>], skel: &Skeleton) -> Result<f64> {
    if motions.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: motions.len(),
        });
    }
    let n = motions[0].len();
    if motions.iter().any(|m| m.len() != n) {
        return Err(Error::LengthMismatch("samples differ in length".into()));
    }
    let pos: Vec<_> = motions.iter().map(|m| forward_kinematics(m, skel)).collect();
    // Mean squared distance to the centroid, written as half the mean squared
    // pairwise distance so identical samples give exactly zero.
    let s = pos.len();
    let joints = skel.joint_count();
    let mut total = 0.0;
    for f in 0..n {
        for j in 0..joints {
            for a in 0..s {
                let u = pos[a].get(f, j);
                for p in &pos[a + 1..] {
                    let v = p.get(f, j);
                    total += (0..3).map(|c| (u[c] - v[c]).as_f64().powi(2)).sum::<f64>();
                }
            }
        }
    }
    let total = total / (s * s) as f64;
    Ok(total / (n * joints) as f64)
}

/// Decodes every sample and scores the spread of the results.
pub fn decode_dispersion<T: Scalar>(
    samples: &[LatentCodes],
    vq: &Hvqvae<T>,
    skel: &Skeleton,
) -> Result<(Vec<MotionSequence<T>>, f64)> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let motions = samples.iter().map(|c| vq.decode_codes(c)).collect::<Result<Vec<_>>>()?;
    let d = dispersion(&motions, skel)?;
    Ok((motions, d))
}

/// Pairs each top sequence with a bottom sequence that repeats one index.
pub fn fix_bottom_vary_top<T: Scalar>(
    bottom_index: usize,
    top_samples: &[Vec<usize>],
    vq: &Hvqvae<T>,
    skel: &Skeleton,
) -> Result<(Vec<MotionSequence<T>>, f64)> {
    let samples: Vec<LatentCodes> = top_samples
        .iter()
        .map(|top| LatentCodes {
            top: top.clone(),
            bottom: vec![bottom_index; 2 * top.len()],
        })
        .collect();
    decode_dispersion(&samples, vq, skel)
}

#[derive(Clone, Debug)]
pub struct BottomReplacement<T> {
    pub original: LatentCodes,
    pub modified: LatentCodes,
    pub motion: MotionSequence<T>,
}

/// Encodes `motion`, sets every bottom code to `fixed_bottom` and decodes.
pub fn fix_top_replace_bottom<T: Scalar>(
    motion: &MotionSequence<T>,
    fixed_bottom: usize,
    vq: &Hvqvae<T>,
) -> Result<BottomReplacement<T>> {
    let original = vq.encode_codes(motion)?;
    let modified = LatentCodes {
        top: original.top.clone(),
        bottom: vec![fixed_bottom; original.bottom.len()],
    };
    let motion = vq.decode_codes(&modified)?;
    Ok(BottomReplacement {
        original,
        modified,
        motion,
    })
}

/// Average joint speed over the whole motion (m/s).
pub fn average_joint_speed<T: Scalar>(motion: &MotionSequence<T>, skel: &Skeleton) -> f64 {
    let s = mean_joint_speed(&forward_kinematics(motion, skel), motion.fps);
    s.iter().sum::<f64>() / s.len().max(1) as f64
}
