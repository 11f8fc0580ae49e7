use std::sync::Arc;

use dancemeld::autodiff::{max_relative_error, numeric_gradient, CustomOp, Graph};
use dancemeld::motion::rotation::{axis_angle, determinant, mat_mul, rotation_vector, transpose, Mat3};
use dancemeld::motion::{
    forward_kinematics, matrix_to_rot6d, rot6d_to_matrix, FkOp, MotionSequence, Skeleton, JOINT_COUNT, MOTION_DIM,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3<f64> {
    let v = [
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    ];
    rotation_vector(v)
}

fn max_abs_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            m = m.max((a[r][c] - b[r][c]).abs());
        }
    }
    m
}

/// Random joint rotations with zero root translation.
fn random_pose(frames: usize, seed: u64) -> MotionSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MotionSequence::rest(frames, [0.0; 3]);
    for i in 0..frames {
        for j in 0..JOINT_COUNT {
            m.set_rot6d(i, j, matrix_to_rot6d(&random_rotation(&mut rng)).unwrap());
        }
    }
    m
}

#[test]
fn rot6d_round_trips_100_random_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let six = matrix_to_rot6d(&r).unwrap();
        let back = rot6d_to_matrix(&six).unwrap();
        worst = worst.max(max_abs_diff(&r, &back));
        let again = matrix_to_rot6d(&back).unwrap();
        for k in 0..6 {
            worst = worst.max((again[k] - six[k]).abs());
        }
    }
    assert!(worst < 1e-5, "worst round-trip error {worst}");
}

#[test]
fn rot6d_round_trips_in_single_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let r32: Mat3<f32> = r.map(|row| row.map(|v| v as f32));
        let back = rot6d_to_matrix(&matrix_to_rot6d(&r32).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - r32[i][j]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn fk_gradient_matches_central_differences() {
    let skel = Skeleton::humanoid();
    let op = Arc::new(FkOp::<f64>::new(&skel));
    let mut m = random_pose(2, 7);
    m.set_translation(0, [0.3, 0.9, -0.2]);
    m.set_translation(1, [0.1, 1.0, 0.4]);
    let x0 = m.frames().clone();
    let mut g = Graph::standalone();
    let x = g.leaf(x0.clone());
    let p = g.custom(x, op.clone());
    let sq = g.square(p);
    let s = g.sum(sq);
    let analytic = g.backward(s).get(x).unwrap().data().to_vec();
    let numeric = numeric_gradient(&x0, 1e-5, |t| op.forward(t).data().iter().map(|v| v * v).sum());
    let err = max_relative_error(&analytic, &numeric, 1e-6);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn fk_translation_equivariance_is_exact() {
    let skel = Skeleton::humanoid();
    let base = random_pose(5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut moved = base.clone();
    let shifts: Vec<[f64; 3]> = (0..5)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0), rng.random_range(-5.0..5.0)])
        .collect();
    for (i, d) in shifts.iter().enumerate() {
        moved.set_translation(i, *d);
    }
    let (a, b) = (forward_kinematics(&base, &skel), forward_kinematics(&moved, &skel));
    for (i, d) in shifts.iter().enumerate() {
        for j in 0..JOINT_COUNT {
            let (p, q) = (a.get(i, j), b.get(i, j));
            for k in 0..3 {
                assert_eq!(q[k], d[k] + p[k], "frame {i} joint {j}");
            }
        }
    }
}

#[test]
fn motion_file_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dmmo");
    let m: MotionSequence<f32> = random_pose(9, 5).cast();
    m.save(&path).unwrap();
    let back = MotionSequence::<f32>::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.frames().shape(), &[9, MOTION_DIM]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoded_6d_is_a_proper_rotation(v in prop::array::uniform6(-3.0f64..3.0)) {
        prop_assume!(v[0].abs() + v[1].abs() + v[2].abs() > 1e-2);
        if let Ok(r) = rot6d_to_matrix(&v) {
            let rtr = mat_mul(&transpose(&r), &r);
            let eye = axis_angle([0.0, 0.0, 1.0], 0.0);
            prop_assert!(max_abs_diff(&rtr, &eye) < 1e-9);
            prop_assert!((determinant(&r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fk_preserves_bone_lengths(seed in 0u64..10_000) {
        let skel = Skeleton::humanoid();
        let m = random_pose(1, seed);
        let p = forward_kinematics(&m, &skel);
        for j in 0..JOINT_COUNT {
            if let Some(par) = skel.parent(j) {
                let (a, b) = (p.get(0, j), p.get(0, par));
                let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                let o = skel.offsets[j];
                let want = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
                prop_assert!((len - want).abs() < 1e-9, "joint {} length {} vs {}", j, len, want);
            }
        }
    }

    #[test]
    fn centering_removes_horizontal_start_offset(x in -10.0f64..10.0, z in -10.0f64..10.0) {
        let m = MotionSequence::<f64>::rest(3, [x, 0.9, z]).centered();
        let t = m.translation(0);
        prop_assert_eq!(t, [0.0, 0.9, 0.0]);
    }
}
