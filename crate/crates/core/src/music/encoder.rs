//! Small learned encoder that maps raw music features to the top-code rate and width.

use rand::Rng;

use super::MusicFeatureSequence;
use crate::autodiff::{Graph, Var};
use crate::nn::{Conv1d, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Combined bottom x top downsample rate of the motion encoders.
pub const POOL_FACTOR: usize = 8;

/// Stride-8 temporal convolution, ReLU, then a linear map to the code width.
#[derive(Clone, Debug)]
pub struct MusicEncoder {
    pub conv: Conv1d,
    pub proj: Linear,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl MusicEncoder {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, in_dim: usize, out_dim: usize) -> Self {
        init.scoped("music", |init| Self {
            conv: Conv1d::new(init, "conv", in_dim, out_dim, POOL_FACTOR, POOL_FACTOR, 0),
            proj: Linear::new(init, "proj", out_dim, out_dim),
            in_dim,
            out_dim,
        })
    }

    /// `[B, N, in_dim]` with `N` divisible by 8 to `[B, N / 8, out_dim]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.conv.forward(g, x);
        let h = g.relu(h);
        self.proj.forward(g, h)
    }
}

/// Repeats the last frame until the length is a multiple of `factor`.
pub fn edge_pad<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let n = x.shape()[0];
    let target = n.div_ceil(factor) * factor;
    if target == n {
        return x.clone();
    }
    let mut data = x.data().to_vec();
    let last = x.row(n - 1).to_vec();
    for _ in n..target {
        data.extend_from_slice(&last);
    }
    Tensor::new(&[target, x.shape()[1]], data)
}

/// Inference-time encoding of one feature sequence: `[ceil(N / 8), out_dim]`.
pub fn encode_music<T: Scalar>(m: &MusicFeatureSequence<T>, enc: &MusicEncoder, store: &ParamStore<T>) -> Tensor<T> {
    let padded = edge_pad(m.features(), POOL_FACTOR);
    let n = padded.shape()[0];
    let mut g = Graph::new(store);
    let x = g.constant(padded.reshape(&[1, n, m.dim()]));
    let y = enc.forward(&mut g, x);
    let out = g.value(y).clone();
    let shape = out.shape().to_vec();
    out.reshape(&shape[1..])
}
