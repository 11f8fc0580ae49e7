//! Encoders, decoders and codebooks of the two-level autoencoder.
//!
//! Rates for a window of `N` frames: `h_b`, `e_b` at `N / 4`; `h_t`, `e_t` at
//! `N / 8`. The top decoder `D_t` maps `e_t` to the bottom rate; its output is
//! concatenated with `h_b` to form `h_b'`, projected to the code width by a
//! 1x1 convolution `P` and quantized. The bottom decoder consumes
//! `Concat(D_t(e_t), e_b)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::HvqvaeConfig;
use super::quantizer::{nearest_indices, Codebook};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, DEFAULT_FPS, MOTION_DIM};
use crate::music::encoder::MusicEncoder;
use crate::nn::{Conv1d, Init, ParamId, ParamStore, ResBlock1d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Frames per top code step.
pub const TOP_RATE: usize = 8;
/// Frames per bottom code step.
pub const BOTTOM_RATE: usize = 4;

/// `conv_in`, strided downsamplers, residual blocks, upsamplers, `conv_out`.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub conv_in: Conv1d,
    pub down: Vec<Conv1d>,
    pub blocks: Vec<ResBlock1d>,
    pub up: Vec<Conv1d>,
    pub conv_out: Conv1d,
}

impl ConvStack {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        in_ch: usize,
        width: usize,
        out_ch: usize,
        downs: usize,
        blocks: usize,
        ups: usize,
    ) -> Self {
        init.scoped(name, |init| Self {
            conv_in: Conv1d::same(init, "conv_in", in_ch, width, 3),
            down: (0..downs)
                .map(|i| Conv1d::down2(init, &format!("down{i}"), width, width))
                .collect(),
            blocks: (0..blocks)
                .map(|i| ResBlock1d::new(init, &format!("block{i}"), width))
                .collect(),
            up: (0..ups)
                .map(|i| Conv1d::same(init, &format!("up{i}"), width, width, 3))
                .collect(),
            conv_out: Conv1d::same(init, "conv_out", width, out_ch, 3),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = self.conv_in.forward(g, x);
        for d in &self.down {
            h = g.relu(h);
            h = d.forward(g, h);
        }
        for b in &self.blocks {
            h = b.forward(g, h);
        }
        h = g.relu(h);
        for u in &self.up {
            h = g.upsample(h, 2);
            h = u.forward(g, h);
            h = g.relu(h);
        }
        self.conv_out.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub enc_b: ConvStack,
    pub enc_t: ConvStack,
    pub dec_t: ConvStack,
    pub dec_b: ConvStack,
    pub proj: Conv1d,
    pub top_codebook: ParamId,
    pub bottom_codebook: ParamId,
    pub music: MusicEncoder,
}

impl Network {
    fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, c: &HvqvaeConfig) -> Self {
        let (w, d) = (c.width, c.code_dim);
        Self {
            enc_b: ConvStack::new(init, "enc_b", c.motion_dim, w, d, 2, c.bottom_blocks, 0),
            enc_t: ConvStack::new(init, "enc_t", d, w, d, 1, c.top_blocks, 0),
            dec_t: ConvStack::new(init, "dec_t", d, w, d, 0, c.top_blocks, 1),
            dec_b: ConvStack::new(init, "dec_b", 2 * d, w, c.motion_dim, 0, c.bottom_blocks, 2),
            proj: Conv1d::new(init, "proj", 2 * d, d, 1, 1, 0),
            top_codebook: init.normal("codebook.top", &[c.top_codes, d], 0.1),
            bottom_codebook: init.normal("codebook.bottom", &[c.bottom_codes, d], 0.1),
            music: MusicEncoder::new(init, c.music_dim, d),
        }
    }
}

/// Features before quantization, one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFeatures<T> {
    /// `N/4 x D`
    pub h_b: Tensor<T>,
    /// `N/8 x D`
    pub h_t: Tensor<T>,
}

/// Code indices of one sequence; `bottom.len() == 2 * top.len()`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentCodes {
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl LatentCodes {
    /// Motion frames these codes decode to.
    pub fn frames(&self) -> usize {
        self.top.len() * TOP_RATE
    }

    pub fn check_ratio(&self) -> Result<()> {
        if self.bottom.len() != 2 * self.top.len() {
            return Err(Error::RatioViolation(format!(
                "{} top codes need {} bottom codes, got {}",
                self.top.len(),
                2 * self.top.len(),
                self.bottom.len()
            )));
        }
        Ok(())
    }
}

/// Every intermediate of one encode/quantize pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<T> {
    pub features: LatentFeatures<T>,
    /// `N/4 x 2D`, `D_t(e_t)` first.
    pub h_b_prime: Tensor<T>,
    pub codes: LatentCodes,
}

/// Graph handles of a training forward pass over `[B, N, 147]`.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub x_hat: Var,
    pub h_b: Var,
    pub h_t: Var,
    /// Codebook rows (gradient reaches the top codebook).
    pub e_t: Var,
    /// Value of `e_t`, gradient of `h_t`.
    pub e_t_st: Var,
    pub h_b_prime: Var,
    /// `P(h_b')`.
    pub projected: Var,
    pub e_b: Var,
    pub e_b_st: Var,
    /// Encoded music at the top rate, when music was supplied.
    pub music: Option<Var>,
    pub top_idx: Vec<usize>,
    pub bottom_idx: Vec<usize>,
}

/// Smallest channel scale used when standardising motion.
pub const MIN_MOTION_STD: f64 = 1e-2;

/// Per-channel affine map applied to motion before the encoder and inverted
/// after the decoder. Fitted once on the training windows, then frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MotionNorm {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; MOTION_DIM],
            std: vec![1.0; MOTION_DIM],
        }
    }

    /// Statistics over every frame of `windows` (`[N, 147]` each).
    pub fn fit<T: Scalar>(windows: &[Tensor<T>]) -> Self {
        let mut sum = vec![0.0; MOTION_DIM];
        let mut sq = vec![0.0; MOTION_DIM];
        let mut n = 0usize;
        for w in windows {
            for row in w.data().chunks(MOTION_DIM) {
                for (k, &v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(MIN_MOTION_STD))
            .collect();
        Self { mean, std }
    }

    fn row<T: Scalar>(v: impl Iterator<Item = f64>) -> Tensor<T> {
        Tensor::new(&[MOTION_DIM], v.map(T::lit).collect())
    }

    /// `(x - mean) / std`
    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let shift = g.constant(Self::row(self.mean.iter().map(|m| -m)));
        let scale = g.constant(Self::row(self.std.iter().map(|s| 1.0 / s)));
        let y = g.add_row(x, shift);
        g.mul_row(y, scale)
    }

    /// `y * std + mean`
    pub fn invert<T: Scalar>(&self, g: &mut Graph<'_, T>, y: Var) -> Var {
        let scale = g.constant(Self::row(self.std.iter().copied()));
        let shift = g.constant(Self::row(self.mean.iter().copied()));
        let y = g.mul_row(y, scale);
        g.add_row(y, shift)
    }
}

#[derive(Clone, Debug)]
pub struct Hvqvae<T: Scalar> {
    pub config: HvqvaeConfig,
    pub store: ParamStore<T>,
    pub net: Network,
    pub norm: MotionNorm,
}

impl<T: Scalar> Hvqvae<T> {
    pub fn new(config: HvqvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&mut Init::new(&mut store, &mut rng), &config);
        Ok(Self {
            config,
            store,
            net,
            norm: MotionNorm::identity(),
        })
    }

    pub fn top_codebook(&self) -> Codebook<T> {
        Codebook::new(self.store.get(self.net.top_codebook).clone()).expect("codebook shape is fixed at construction")
    }

    pub fn bottom_codebook(&self) -> Codebook<T> {
        Codebook::new(self.store.get(self.net.bottom_codebook).clone())
            .expect("codebook shape is fixed at construction")
    }

    fn run<O>(&self, f: impl FnOnce(&mut Graph<'_, T>) -> O) -> O {
        let mut g = Graph::new(&self.store);
        f(&mut g)
    }

    /// Training graph. `x` is `[B, N, 147]`, `music` is `[B, N, music_dim]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var, music: Option<Var>) -> ForwardPass {
        let shape = g.shape(x).to_vec();
        let (b, n) = (shape[0], shape[1]);
        let x_in = self.norm.apply(g, x);
        let h_b = self.net.enc_b.forward(g, x_in);
        let h_t = self.net.enc_t.forward(g, h_b);

        let cb_t = g.param(self.net.top_codebook);
        let top_idx = nearest_indices(g.value(h_t), g.value(cb_t));
        let e_t = g.gather(cb_t, &top_idx, &[b, n / TOP_RATE]);
        let e_t_st = g.straight_through(h_t, e_t);

        let dt = self.net.dec_t.forward(g, e_t_st);
        let h_b_prime = g.concat(dt, h_b);
        let projected = self.net.proj.forward(g, h_b_prime);

        let cb_b = g.param(self.net.bottom_codebook);
        let bottom_idx = nearest_indices(g.value(projected), g.value(cb_b));
        let e_b = g.gather(cb_b, &bottom_idx, &[b, n / BOTTOM_RATE]);
        let e_b_st = g.straight_through(projected, e_b);

        let dec_in = g.concat(dt, e_b_st);
        let y = self.net.dec_b.forward(g, dec_in);
        let x_hat = self.norm.invert(g, y);
        let music = music.map(|m| self.net.music.forward(g, m));
        ForwardPass {
            x_hat,
            h_b,
            h_t,
            e_t,
            e_t_st,
            h_b_prime,
            projected,
            e_b,
            e_b_st,
            music,
            top_idx,
            bottom_idx,
        }
    }

    fn check_motion(&self, x: &MotionSequence<T>) -> Result<()> {
        let n = x.len();
        if n == 0 || !n.is_multiple_of(TOP_RATE) {
            return Err(Error::BadLength(n));
        }
        Ok(())
    }

    fn check_width(&self, t: &Tensor<T>, width: usize) -> Result<()> {
        if t.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!("expected a T x C matrix, got {:?}", t.shape())));
        }
        if t.last_dim() != width {
            return Err(Error::DimMismatch {
                expected: width,
                got: t.last_dim(),
            });
        }
        Ok(())
    }

    /// `h_b = E_b(x)`, `h_t = E_t(h_b)`.
    pub fn encode(&self, x: &MotionSequence<T>) -> Result<LatentFeatures<T>> {
        self.check_motion(x)?;
        let n = x.len();
        self.run(|g| {
            let xv = g.constant(x.frames().clone().reshape(&[1, n, MOTION_DIM]));
            let xv = self.norm.apply(g, xv);
            let h_b = self.net.enc_b.forward(g, xv);
            let h_t = self.net.enc_t.forward(g, h_b);
            let d = self.config.code_dim;
            Ok(LatentFeatures {
                h_b: g.value(h_b).clone().reshape(&[n / BOTTOM_RATE, d]),
                h_t: g.value(h_t).clone().reshape(&[n / TOP_RATE, d]),
            })
        })
    }

    pub fn quantize_top(&self, h_t: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>)> {
        self.check_width(h_t, self.config.code_dim)?;
        self.top_codebook().quantize(h_t)
    }

    /// `D_t(e_t)` at the bottom rate.
    pub fn upsample_top(&self, e_t: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(e_t, self.config.code_dim)?;
        let m = e_t.shape()[0];
        Ok(self.run(|g| {
            let e = g.constant(e_t.clone().reshape(&[1, m, self.config.code_dim]));
            let y = self.net.dec_t.forward(g, e);
            g.value(y).clone().reshape(&[2 * m, self.config.code_dim])
        }))
    }

    /// `Concat(D_t(e_t), h_b)`.
    pub fn form_hb_prime(&self, h_b: &Tensor<T>, e_t: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(h_b, self.config.code_dim)?;
        let up = self.upsample_top(e_t)?;
        if up.shape()[0] != h_b.shape()[0] {
            return Err(Error::LengthMismatch(format!(
                "D_t(e_t) has {} steps, h_b has {}",
                up.shape()[0],
                h_b.shape()[0]
            )));
        }
        Ok(concat_channels(&up, h_b))
    }

    /// `P(h_b')`.
    pub fn project(&self, h_b_prime: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(h_b_prime, 2 * self.config.code_dim)?;
        let m = h_b_prime.shape()[0];
        Ok(self.run(|g| {
            let h = g.constant(h_b_prime.clone().reshape(&[1, m, 2 * self.config.code_dim]));
            let y = self.net.proj.forward(g, h);
            g.value(y).clone().reshape(&[m, self.config.code_dim])
        }))
    }

    /// Quantizes `P(h_b')` with the bottom codebook.
    pub fn quantize_bottom(&self, h_b_prime: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>)> {
        let p = self.project(h_b_prime)?;
        self.bottom_codebook().quantize(&p)
    }

    /// `D_b(Concat(D_t(e_t), e_b))`.
    pub fn decode(&self, e_t: &Tensor<T>, e_b: &Tensor<T>) -> Result<MotionSequence<T>> {
        self.check_width(e_b, self.config.code_dim)?;
        let up = self.upsample_top(e_t)?;
        let m = e_b.shape()[0];
        if up.shape()[0] != m {
            return Err(Error::LengthMismatch(format!(
                "{} top steps need {} bottom steps, got {m}",
                e_t.shape()[0],
                up.shape()[0]
            )));
        }
        let input = concat_channels(&up, e_b);
        let frames = self.run(|g| {
            let h = g.constant(input.reshape(&[1, m, 2 * self.config.code_dim]));
            let y = self.net.dec_b.forward(g, h);
            let y = self.norm.invert(g, y);
            g.value(y).clone().reshape(&[m * BOTTOM_RATE, MOTION_DIM])
        });
        MotionSequence::new(frames, DEFAULT_FPS)
    }

    /// Codebook vectors for `codes`.
    pub fn quantized(&self, codes: &LatentCodes) -> Result<(Tensor<T>, Tensor<T>)> {
        codes.check_ratio()?;
        let check = |idx: &[usize], k: usize, level: &str| {
            if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
                return Err(Error::IndexOutOfRange(format!("{level} code {bad} >= codebook size {k}")));
            }
            Ok(())
        };
        check(&codes.top, self.config.top_codes, "top")?;
        check(&codes.bottom, self.config.bottom_codes, "bottom")?;
        let d = self.config.code_dim;
        let e_t = self.top_codebook().lookup(&codes.top, &[codes.top.len(), d]);
        let e_b = self.bottom_codebook().lookup(&codes.bottom, &[codes.bottom.len(), d]);
        Ok((e_t, e_b))
    }

    pub fn decode_codes(&self, codes: &LatentCodes) -> Result<MotionSequence<T>> {
        if codes.top.is_empty() {
            return Err(Error::BadLength(0));
        }
        let (e_t, e_b) = self.quantized(codes)?;
        self.decode(&e_t, &e_b)
    }

    /// Full encode, quantize top, form `h_b'`, quantize bottom.
    pub fn encode_full(&self, x: &MotionSequence<T>) -> Result<Encoding<T>> {
        let features = self.encode(x)?;
        let (top, e_t) = self.quantize_top(&features.h_t)?;
        let h_b_prime = self.form_hb_prime(&features.h_b, &e_t)?;
        let (bottom, _) = self.quantize_bottom(&h_b_prime)?;
        Ok(Encoding {
            features,
            h_b_prime,
            codes: LatentCodes { top, bottom },
        })
    }

    pub fn encode_codes(&self, x: &MotionSequence<T>) -> Result<LatentCodes> {
        Ok(self.encode_full(x)?.codes)
    }

    /// Encode then decode through the codebooks.
    pub fn reconstruct(&self, x: &MotionSequence<T>) -> Result<MotionSequence<T>> {
        let codes = self.encode_codes(x)?;
        self.decode_codes(&codes)
    }

    /// Empirical decoder reach: how many frames before the first and after
    /// the last frame of a code step a change to that step can touch.
    pub fn decoder_reach(&self, trials: usize, seed: u64) -> DecoderReach {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = 32;
        let mut reach = DecoderReach::default();
        for _ in 0..trials.max(1) {
            let codes = LatentCodes {
                top: (0..steps).map(|_| rng.random_range(0..self.config.top_codes)).collect(),
                bottom: (0..2 * steps)
                    .map(|_| rng.random_range(0..self.config.bottom_codes))
                    .collect(),
            };
            let base = self.decode_codes(&codes).expect("valid random codes");
            let k = steps / 2;
            let mut top = codes.clone();
            top.top[k] = (top.top[k] + rng.random_range(1..self.config.top_codes)) % self.config.top_codes;
            let changed = self.decode_codes(&top).expect("valid edit");
            if let Some((lo, hi)) = changed_span(&base, &changed, 0.0) {
                let (s, e) = (k * TOP_RATE, (k + 1) * TOP_RATE - 1);
                reach.top_before = reach.top_before.max(s.saturating_sub(lo));
                reach.top_after = reach.top_after.max(hi.saturating_sub(e));
            }
            let kb = steps;
            let mut bottom = codes.clone();
            bottom.bottom[kb] =
                (bottom.bottom[kb] + rng.random_range(1..self.config.bottom_codes)) % self.config.bottom_codes;
            let changed = self.decode_codes(&bottom).expect("valid edit");
            if let Some((lo, hi)) = changed_span(&base, &changed, 0.0) {
                let (s, e) = (kb * BOTTOM_RATE, (kb + 1) * BOTTOM_RATE - 1);
                reach.bottom_before = reach.bottom_before.max(s.saturating_sub(lo));
                reach.bottom_after = reach.bottom_after.max(hi.saturating_sub(e));
            }
        }
        reach
    }
}

/// Frame reach of single-step code changes, see [`Hvqvae::decoder_reach`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderReach {
    pub top_before: usize,
    pub top_after: usize,
    pub bottom_before: usize,
    pub bottom_after: usize,
}

impl DecoderReach {
    /// Frames `[lo, hi]` that editing top unit `k` (with its two bottom steps) can change.
    pub fn unit_window(&self, k: usize, frames: usize) -> (usize, usize) {
        let before = self.top_before.max(self.bottom_before);
        let after = self.top_after.max(self.bottom_after);
        let lo = (k * TOP_RATE).saturating_sub(before);
        let hi = ((k + 1) * TOP_RATE - 1 + after).min(frames.saturating_sub(1));
        (lo, hi)
    }
}

/// First and last frame where any channel differs by more than `tol`.
pub fn changed_span<T: Scalar>(a: &MotionSequence<T>, b: &MotionSequence<T>, tol: f64) -> Option<(usize, usize)> {
    let n = a.len().min(b.len());
    let differs = |i: usize| {
        a.frame(i)
            .iter()
            .zip(b.frame(i))
            .any(|(x, y)| (x.as_f64() - y.as_f64()).abs() > tol)
    };
    let lo = (0..n).find(|&i| differs(i))?;
    let hi = (0..n).rev().find(|&i| differs(i))?;
    Some((lo, hi))
}

fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let rows = a.shape()[0];
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Tensor::new(&[rows, a.last_dim() + b.last_dim()], out)
}
