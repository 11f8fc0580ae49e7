use rand::Rng;

use super::params::{Init, ParamId};
use crate::autodiff::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        init.scoped(name, |init| Self {
            w: init.uniform("weight", &[in_dim, out_dim], bound),
            b: Some(init.uniform("bias", &[out_dim], bound)),
            in_dim,
            out_dim,
        })
    }

    /// Zero weight and bias; the layer outputs zeros until trained.
    pub fn zeros<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        init.scoped(name, |init| Self {
            w: init.constant("weight", &[in_dim, out_dim], 0.0),
            b: Some(init.constant("bias", &[out_dim], 0.0)),
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Temporal convolution over `[batch, time, channels]`, stored in im2col layout.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        init.scoped(name, |init| Self {
            w: init.uniform("weight", &[kernel * in_ch, out_ch], bound),
            b: init.uniform("bias", &[out_ch], bound),
            kernel,
            stride,
            pad,
            in_ch,
            out_ch,
        })
    }

    /// Same-length convolution with an odd kernel.
    pub fn same<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1);
        Self::new(init, name, in_ch, out_ch, kernel, 1, kernel / 2)
    }

    /// Halves the time axis (kernel 4, stride 2, padding 1).
    pub fn down2<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self::new(init, name, in_ch, out_ch, 4, 2, 1)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let cols = if self.kernel == 1 && self.stride == 1 && self.pad == 0 {
            x
        } else {
            g.unfold(x, self.kernel, self.stride, self.pad)
        };
        let w = g.param(self.w);
        let y = g.matmul(cols, w);
        let b = g.param(self.b);
        g.add_row(y, b)
    }

    /// One-sided temporal reach of this layer, in input frames.
    pub fn reach(&self) -> usize {
        self.kernel.saturating_sub(1).max(self.pad)
    }
}

/// `x + conv1x1(relu(conv3(relu(x))))`
#[derive(Clone, Debug)]
pub struct ResBlock1d {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

impl ResBlock1d {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, channels: usize) -> Self {
        init.scoped(name, |init| Self {
            conv1: Conv1d::same(init, "conv1", channels, channels, 3),
            conv2: Conv1d::same(init, "conv2", channels, channels, 1),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = g.relu(x);
        let h = self.conv1.forward(g, h);
        let h = g.relu(h);
        let h = self.conv2.forward(g, h);
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dim: usize) -> Self {
        init.scoped(name, |init| Self {
            gain: init.constant("gain", &[dim], 1.0),
            bias: init.constant("bias", &[dim], 0.0),
            eps: 1e-5,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let y = g.layer_norm(x, self.eps);
        let gain = g.param(self.gain);
        let y = g.mul_row(y, gain);
        let bias = g.param(self.bias);
        g.add_row(y, bias)
    }
}

/// Inverted dropout; identity when `rng` is `None`.
pub fn dropout<T: Scalar, R: Rng>(g: &mut Graph<'_, T>, x: Var, p: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let m = g.constant(Tensor::new(&shape, mask));
    g.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strided_conv_halves_time() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = {
            let mut init = Init::new(&mut store, &mut rng);
            Conv1d::down2(&mut init, "c", 3, 5)
        };
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[2, 16, 3]));
        let y = conv.forward(&mut g, x);
        assert_eq!(g.shape(y), &[2, 8, 5]);
    }

    #[test]
    fn dropout_without_rng_is_identity() {
        let mut g = Graph::<f64>::standalone();
        let x = g.constant(Tensor::full(&[4], 2.0));
        let y = dropout::<f64, ChaCha8Rng>(&mut g, x, 0.5, None);
        assert_eq!(x, y);
    }
}
