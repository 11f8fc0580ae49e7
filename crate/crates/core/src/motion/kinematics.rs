//! Forward kinematics: root translation + per-joint 6D rotations to world positions.
//!
//! Each joint's world position is its parent's world position plus the parent's
//! world rotation applied to the rest offset; the root sits at translation +
//! root offset. [`FkOp`] exposes the same map to the autodiff graph with an
//! analytic backward pass.

use crate::autodiff::CustomOp;
use crate::motion::rotation::{
    self, mat_mul, mat_vec, rot6d_backward, rot6d_to_matrix_guarded, transpose, Mat3, Vec3,
};
use crate::motion::sequence::{MotionSequence, MOTION_DIM};
use crate::motion::skeleton::{Skeleton, JOINT_COUNT};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `N x 24 x 3` world positions.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPositions<T> {
    data: Tensor<T>,
}

impl<T: Scalar> JointPositions<T> {
    pub fn from_tensor(data: Tensor<T>) -> Self {
        assert_eq!(&data.shape()[1..], &[JOINT_COUNT, 3]);
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, frame: usize, joint: usize) -> [T; 3] {
        let o = (frame * JOINT_COUNT + joint) * 3;
        let d = self.data.data();
        [d[o], d[o + 1], d[o + 2]]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[T] {
        let w = JOINT_COUNT * 3;
        &self.data.data()[i * w..(i + 1) * w]
    }
}

/// Skeleton converted to the working scalar.
#[derive(Clone, Debug)]
pub struct FkOp<T> {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3<T>>,
}

impl<T: Scalar> FkOp<T> {
    pub fn new(skel: &Skeleton) -> Self {
        Self {
            parents: (0..skel.joint_count()).map(|j| skel.parent(j)).collect(),
            offsets: skel
                .offsets
                .iter()
                .map(|o| [T::lit(o[0]), T::lit(o[1]), T::lit(o[2])])
                .collect(),
        }
    }

    /// Returns (local rotations, world rotations) and writes positions into `pos`.
    /// The chain is evaluated relative to the root translation, which is added
    /// once at the end, so translating the input shifts every joint exactly.
    fn frame(&self, frame: &[T], pos: &mut [T]) -> (Vec<Mat3<T>>, Vec<Mat3<T>>) {
        let mut local = Vec::with_capacity(JOINT_COUNT);
        let mut world: Vec<Mat3<T>> = Vec::with_capacity(JOINT_COUNT);
        for j in 0..JOINT_COUNT {
            let rl = rot6d_to_matrix_guarded(&frame[3 + 6 * j..9 + 6 * j]);
            let off = self.offsets[j];
            let (p, rw) = match self.parents[j] {
                None => (off, rl),
                Some(par) => {
                    let pp = [pos[3 * par], pos[3 * par + 1], pos[3 * par + 2]];
                    (
                        rotation::add(pp, mat_vec(&world[par], off)),
                        mat_mul(&world[par], &rl),
                    )
                }
            };
            pos[3 * j..3 * j + 3].copy_from_slice(&p);
            local.push(rl);
            world.push(rw);
        }
        for p in pos.chunks_mut(3) {
            for k in 0..3 {
                p[k] = frame[k] + p[k];
            }
        }
        (local, world)
    }

    fn frame_backward(&self, frame: &[T], grad_pos: &[T], grad_in: &mut [T]) {
        let mut scratch = vec![T::zero(); JOINT_COUNT * 3];
        let (local, world) = self.frame(frame, &mut scratch);
        let zero = [[T::zero(); 3]; 3];
        let mut gp: Vec<Vec3<T>> = (0..JOINT_COUNT)
            .map(|j| [grad_pos[3 * j], grad_pos[3 * j + 1], grad_pos[3 * j + 2]])
            .collect();
        let mut gw: Vec<Mat3<T>> = vec![zero; JOINT_COUNT];
        let mut gl: Vec<Mat3<T>> = vec![zero; JOINT_COUNT];
        for j in (0..JOINT_COUNT).rev() {
            match self.parents[j] {
                None => {
                    gl[j] = gw[j];
                    grad_in[..3].copy_from_slice(&gp[j]);
                }
                Some(par) => {
                    let g = gp[j];
                    gp[par] = rotation::add(gp[par], g);
                    let off = self.offsets[j];
                    let from_child = mat_mul(&gw[j], &transpose(&local[j]));
                    for r in 0..3 {
                        for c in 0..3 {
                            gw[par][r][c] += g[r] * off[c] + from_child[r][c];
                        }
                    }
                    gl[j] = mat_mul(&transpose(&world[par]), &gw[j]);
                }
            }
        }
        for j in 0..JOINT_COUNT {
            let g6 = rot6d_backward(&frame[3 + 6 * j..9 + 6 * j], &gl[j]);
            grad_in[3 + 6 * j..9 + 6 * j].copy_from_slice(&g6);
        }
    }
}

impl<T: Scalar> CustomOp<T> for FkOp<T> {
    fn name(&self) -> &'static str {
        "forward_kinematics"
    }

    /// `[.., 147] -> [.., 24, 3]`
    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        assert_eq!(input.last_dim(), MOTION_DIM);
        let frames = input.rows();
        let mut out = vec![T::zero(); frames * JOINT_COUNT * 3];
        for (f, chunk) in out.chunks_mut(JOINT_COUNT * 3).enumerate() {
            self.frame(input.row(f), chunk);
        }
        let mut shape = input.shape()[..input.ndim() - 1].to_vec();
        shape.extend([JOINT_COUNT, 3]);
        Tensor::new(&shape, out)
    }

    fn backward(&self, input: &Tensor<T>, _output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let frames = input.rows();
        let w = JOINT_COUNT * 3;
        let mut gin = vec![T::zero(); input.len()];
        for f in 0..frames {
            self.frame_backward(
                input.row(f),
                &grad_out.data()[f * w..(f + 1) * w],
                &mut gin[f * MOTION_DIM..(f + 1) * MOTION_DIM],
            );
        }
        Tensor::new(input.shape(), gin)
    }
}

pub fn forward_kinematics<T: Scalar>(motion: &MotionSequence<T>, skel: &Skeleton) -> JointPositions<T> {
    let op = FkOp::new(skel);
    JointPositions {
        data: op.forward(motion.frames()),
    }
}
