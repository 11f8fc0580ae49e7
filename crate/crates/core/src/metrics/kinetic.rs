use super::{FeatureKind, FeatureVector};
use crate::motion::{forward_kinematics, JointPositions, MotionSequence, Skeleton, JOINT_COUNT};
use crate::scalar::Scalar;

/// Mean squared velocity of each joint in (m/s)^2, from forward differences.
pub fn kinetic_from_positions<T: Scalar>(pos: &JointPositions<T>, fps: u32) -> FeatureVector {
    let n = pos.len();
    let mut values = vec![0.0; JOINT_COUNT];
    if n >= 2 {
        let fps = fps as f64;
        for i in 0..n - 1 {
            for (j, v) in values.iter_mut().enumerate() {
                let a = pos.get(i, j);
                let b = pos.get(i + 1, j);
                *v += (0..3)
                    .map(|c| ((b[c] - a[c]).as_f64() * fps).powi(2))
                    .sum::<f64>();
            }
        }
        for v in &mut values {
            *v /= (n - 1) as f64;
        }
    }
    FeatureVector {
        kind: FeatureKind::Kinetic,
        values,
    }
}

pub fn kinetic_features<T: Scalar>(motion: &MotionSequence<T>, skel: &Skeleton) -> FeatureVector {
    kinetic_from_positions(&forward_kinematics(motion, skel), motion.fps)
}
