//! Boolean pose predicates evaluated in a body frame and averaged over frames.
//!
//! The body frame sits at the pelvis with `up = +y`, `lateral` pointing from
//! the right hip to the left hip in the ground plane and
//! `forward = lateral x up`.

use super::{FeatureKind, FeatureVector};
use crate::motion::contacts::UP;
use crate::motion::skeleton::joints::*;
use crate::motion::{forward_kinematics, JointPositions, MotionSequence, Skeleton};
use crate::scalar::Scalar;

pub const GEOMETRIC_PREDICATES: [&str; 16] = [
    "left_hand_above_head",
    "right_hand_above_head",
    "left_hand_above_shoulder",
    "right_hand_above_shoulder",
    "left_hand_in_front",
    "right_hand_in_front",
    "hands_wide_apart",
    "hands_together",
    "left_knee_bent",
    "right_knee_bent",
    "left_elbow_bent",
    "right_elbow_bent",
    "feet_crossed",
    "left_foot_raised",
    "right_foot_raised",
    "torso_leaning_forward",
];

const IN_FRONT: f64 = 0.2;
const WIDE: f64 = 1.0;
const TOGETHER: f64 = 0.3;
/// Interior joint angle below which a limb counts as bent.
const BENT_DEG: f64 = 150.0;
const RAISED: f64 = 0.1;
/// sin(20 deg)
const LEAN: f64 = 0.342;

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: V) -> f64 {
    dot(a, a).sqrt()
}

fn bent(outer_a: V, mid: V, outer_b: V) -> bool {
    let (u, w) = (sub(outer_a, mid), sub(outer_b, mid));
    let c = dot(u, w) / (norm(u) * norm(w)).max(1e-12);
    c.clamp(-1.0, 1.0).acos().to_degrees() < BENT_DEG
}

/// Truth values of every predicate for one frame.
pub fn frame_predicates(p: &dyn Fn(usize) -> V) -> [bool; 16] {
    let pelvis = p(PELVIS);
    let lat = sub(p(L_HIP), p(R_HIP));
    let lat_len = (lat[0] * lat[0] + lat[2] * lat[2]).sqrt().max(1e-12);
    let lateral = [lat[0] / lat_len, 0.0, lat[2] / lat_len];
    // lateral x up
    let forward = [-lateral[2], 0.0, lateral[0]];
    let fwd = |j: usize| dot(sub(p(j), pelvis), forward);
    let side = |j: usize| dot(sub(p(j), pelvis), lateral);
    let y = |j: usize| p(j)[UP];
    let floor = y(L_FOOT).min(y(R_FOOT));
    let torso = sub(p(NECK), pelvis);
    [
        y(L_HAND) > y(HEAD),
        y(R_HAND) > y(HEAD),
        y(L_WRIST) > y(L_SHOULDER),
        y(R_WRIST) > y(R_SHOULDER),
        fwd(L_HAND) > IN_FRONT,
        fwd(R_HAND) > IN_FRONT,
        norm(sub(p(L_HAND), p(R_HAND))) > WIDE,
        norm(sub(p(L_HAND), p(R_HAND))) < TOGETHER,
        bent(p(L_HIP), p(L_KNEE), p(L_ANKLE)),
        bent(p(R_HIP), p(R_KNEE), p(R_ANKLE)),
        bent(p(L_SHOULDER), p(L_ELBOW), p(L_WRIST)),
        bent(p(R_SHOULDER), p(R_ELBOW), p(R_WRIST)),
        side(L_ANKLE) < side(R_ANKLE),
        y(L_FOOT) - floor > RAISED,
        y(R_FOOT) - floor > RAISED,
        dot(torso, forward) / norm(torso).max(1e-12) > LEAN,
    ]
}

pub fn geometric_from_positions<T: Scalar>(pos: &JointPositions<T>) -> FeatureVector {
    let n = pos.len();
    let mut values = vec![0.0; GEOMETRIC_PREDICATES.len()];
    for i in 0..n {
        let get = |j: usize| pos.get(i, j).map(|v| v.as_f64());
        for (v, t) in values.iter_mut().zip(frame_predicates(&get)) {
            if t {
                *v += 1.0;
            }
        }
    }
    if n > 0 {
        for v in &mut values {
            *v /= n as f64;
        }
    }
    FeatureVector {
        kind: FeatureKind::Geometric,
        values,
    }
}

pub fn geometric_features<T: Scalar>(motion: &MotionSequence<T>, skel: &Skeleton) -> FeatureVector {
    geometric_from_positions(&forward_kinematics(motion, skel))
}
