//! Foot-contact plausibility: horizontal centre-of-mass acceleration is only
//! physical while a foot is planted. Lower is better.

use crate::motion::contacts::UP;
use crate::motion::skeleton::joints::{L_ANKLE, L_FOOT, R_ANKLE, R_FOOT};
use crate::motion::{forward_kinematics, JointPositions, MotionSequence, Skeleton, JOINT_COUNT};
use crate::scalar::Scalar;

/// Uniform-mass centre of mass: the mean joint position.
fn com<T: Scalar>(pos: &JointPositions<T>, i: usize) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in 0..JOINT_COUNT {
        let p = pos.get(i, j);
        for k in 0..3 {
            c[k] += p[k].as_f64() / JOINT_COUNT as f64;
        }
    }
    c
}

fn speed<T: Scalar>(pos: &JointPositions<T>, i: usize, j: usize, fps: f64) -> f64 {
    let (a, b) = (pos.get(i, j), pos.get(i + 1, j));
    (0..3).map(|k| (b[k] - a[k]).as_f64().powi(2)).sum::<f64>().sqrt() * fps
}

/// Mean over frames of `a(i) * v_left(i) * v_right(i)`, where `a` is the
/// horizontal COM acceleration magnitude divided by its clip maximum and each
/// foot speed (m/s) is the slower of its ankle and toe.
pub fn pfc_from_positions<T: Scalar>(pos: &JointPositions<T>, fps: u32) -> f64 {
    let n = pos.len();
    if n < 3 {
        return 0.0;
    }
    let fps = fps as f64;
    let c: Vec<[f64; 3]> = (0..n).map(|i| com(pos, i)).collect();
    let acc: Vec<f64> = (1..n - 1)
        .map(|i| {
            (0..3)
                .filter(|&k| k != UP)
                .map(|k| ((c[i + 1][k] - 2.0 * c[i][k] + c[i - 1][k]) * fps * fps).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max = acc.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let total: f64 = (1..n - 1)
        .map(|i| {
            let left = speed(pos, i, L_ANKLE, fps).min(speed(pos, i, L_FOOT, fps));
            let right = speed(pos, i, R_ANKLE, fps).min(speed(pos, i, R_FOOT, fps));
            acc[i - 1] / max * left * right
        })
        .sum();
    total / (n - 2) as f64
}

pub fn pfc<T: Scalar>(motion: &MotionSequence<T>, skel: &Skeleton) -> f64 {
    pfc_from_positions(&forward_kinematics(motion, skel), motion.fps)
}
