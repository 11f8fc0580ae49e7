//! Transformer that predicts the clean latent sequence from a noisy one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latents::LatentStats;
use super::schedule::{build_cosine_schedule, NoiseSchedule};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, Init, LayerNorm, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Music frames per latent step.
pub const COND_POOL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub latent_dim: usize,
    pub feed_forward: usize,
    pub dropout: f64,
    pub seq_len: usize,
    /// `3 * code_dim`: `h_b'` then `h_t`.
    pub input_dim: usize,
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            heads: 8,
            latent_dim: 512,
            feed_forward: 1024,
            dropout: 0.1,
            seq_len: 128,
            input_dim: 1536,
            cond_dim: 4800,
        }
    }
}

impl DenoiserConfig {
    /// Reduced network for CPU runs over latents of width `code_dim`.
    pub fn small(code_dim: usize, cond_dim: usize) -> Self {
        Self {
            layers: 2,
            heads: 4,
            latent_dim: 128,
            feed_forward: 256,
            dropout: 0.1,
            seq_len: 128,
            input_dim: 3 * code_dim,
            cond_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.layers,
            self.heads,
            self.latent_dim,
            self.feed_forward,
            self.seq_len,
            self.input_dim,
            self.cond_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("denoiser dimensions must be positive".into()));
        }
        if !self.latent_dim.is_multiple_of(self.heads) || !self.latent_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "latent width {} must be even and divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Music frames covered by one latent sequence.
    pub fn window_frames(&self) -> usize {
        self.seq_len * COND_POOL
    }
}

/// Sinusoidal embedding of `t` with `dim` channels, sines first.
pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    in_proj: Linear,
    cond_proj: Linear,
    time1: Linear,
    time2: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    out_proj: Linear,
}

impl Denoiser {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, c: &DenoiserConfig) -> Self {
        let w = c.latent_dim;
        let blocks = (0..c.layers)
            .map(|i| {
                init.scoped(&format!("block{i}"), |init| Block {
                    ln1: LayerNorm::new(init, "ln1", w),
                    q: Linear::new(init, "q", w, w),
                    k: Linear::new(init, "k", w, w),
                    v: Linear::new(init, "v", w, w),
                    o: Linear::new(init, "o", w, w),
                    ln2: LayerNorm::new(init, "ln2", w),
                    ff1: Linear::new(init, "ff1", w, c.feed_forward),
                    ff2: Linear::new(init, "ff2", c.feed_forward, w),
                })
            })
            .collect();
        Self {
            in_proj: Linear::new(init, "in_proj", c.input_dim, w),
            cond_proj: Linear::new(init, "cond_proj", c.cond_dim, w),
            time1: Linear::new(init, "time1", w, w),
            time2: Linear::new(init, "time2", w, w),
            blocks,
            ln_out: LayerNorm::new(init, "ln_out", w),
            out_proj: Linear::zeros(init, "out_proj", w, c.input_dim),
        }
    }

    /// `x` is `[B, L, input_dim]`, `cond` is `[B, L, cond_dim]`, one step per
    /// batch entry. Dropout is active only when `rng` is given.
    pub fn forward<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        c: &DenoiserConfig,
        x: Var,
        t: &[usize],
        cond: Var,
        mut rng: Option<&mut R>,
    ) -> Var {
        let shape = g.shape(x).to_vec();
        let (b, l) = (shape[0], shape[1]);
        let w = c.latent_dim;

        let h = self.in_proj.forward(g, x);
        let cp = self.cond_proj.forward(g, cond);
        let h = g.add(h, cp);
        let pos: Vec<T> = (0..b)
            .flat_map(|_| (0..l).flat_map(|i| timestep_embedding(i as f64, w)))
            .map(T::lit)
            .collect();
        let pos = g.constant(Tensor::new(&[b, l, w], pos));
        let h = g.add(h, pos);

        let temb: Vec<T> = t.iter().flat_map(|&ti| timestep_embedding(ti as f64, w)).map(T::lit).collect();
        let temb = g.constant(Tensor::new(&[b, 1, w], temb));
        let tok = self.time1.forward(g, temb);
        let tok = g.silu(tok);
        let tok = self.time2.forward(g, tok);
        let mut h = g.concat_time(tok, h);

        let heads = c.heads;
        let scale = T::lit(1.0 / ((w / heads) as f64).sqrt());
        for blk in &self.blocks {
            let a = blk.ln1.forward(g, h);
            let q = blk.q.forward(g, a);
            let k = blk.k.forward(g, a);
            let v = blk.v.forward(g, a);
            let q = g.split_heads(q, heads);
            let k = g.split_heads(k, heads);
            let v = g.split_heads(v, heads);
            let s = g.bmm(q, k, true);
            let s = g.scale(s, scale);
            let p = g.softmax(s);
            let y = g.bmm(p, v, false);
            let y = g.merge_heads(y, heads);
            let y = blk.o.forward(g, y);
            let y = dropout(g, y, c.dropout, rng.as_deref_mut());
            h = g.add(h, y);

            let a = blk.ln2.forward(g, h);
            let f = blk.ff1.forward(g, a);
            let f = g.gelu(f);
            let f = blk.ff2.forward(g, f);
            let f = dropout(g, f, c.dropout, rng.as_deref_mut());
            h = g.add(h, f);
        }
        let h = self.ln_out.forward(g, h);
        let h = g.slice_time(h, 1, l + 1);
        self.out_proj.forward(g, h)
    }
}

/// Anything that predicts clean latents `[B, L, C]` from noisy ones.
pub trait Denoise<T: Scalar> {
    fn denoise(&self, h_noisy: &Tensor<T>, t: &[usize], cond: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Denoiser parameters together with the schedule and latent statistics it
/// was trained with.
#[derive(Clone, Debug)]
pub struct DiffusionPrior<T: Scalar> {
    pub config: DenoiserConfig,
    pub store: ParamStore<T>,
    pub net: Denoiser,
    pub schedule: NoiseSchedule,
    pub stats: LatentStats,
}

impl<T: Scalar> DiffusionPrior<T> {
    pub fn new(config: DenoiserConfig, diffusion_steps: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = build_cosine_schedule(diffusion_steps)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Denoiser::new(&mut Init::new(&mut store, &mut rng), &config);
        Ok(Self {
            stats: LatentStats::identity(config.input_dim),
            config,
            store,
            net,
            schedule,
        })
    }

    /// Checks `[B, L, input_dim]` latents against `[B, L, cond_dim]` conditions.
    pub fn check_shapes(&self, h: &[usize], cond: &[usize], steps: usize) -> Result<()> {
        let c = &self.config;
        let ok = h.len() == 3
            && cond.len() == 3
            && h[2] == c.input_dim
            && cond[2] == c.cond_dim
            && h[0] == cond[0]
            && h[1] == cond[1]
            && h[0] == steps
            && h[1] > 0;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "latents {h:?}, condition {cond:?} and {steps} steps do not fit [B, L, {}] / [B, L, {}]",
                c.input_dim, c.cond_dim
            )));
        }
        Ok(())
    }

    /// Graph handle of the prediction, with dropout when `rng` is given.
    pub fn forward<R: Rng>(&self, g: &mut Graph<'_, T>, x: Var, t: &[usize], cond: Var, rng: Option<&mut R>) -> Var {
        self.net.forward(g, &self.config, x, t, cond, rng)
    }
}

impl<T: Scalar> Denoise<T> for DiffusionPrior<T> {
    fn denoise(&self, h_noisy: &Tensor<T>, t: &[usize], cond: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_shapes(h_noisy.shape(), cond.shape(), t.len())?;
        for &ti in t {
            self.schedule.check_step(ti)?;
        }
        let mut g = Graph::new(&self.store);
        let x = g.constant(h_noisy.clone());
        let c = g.constant(cond.clone());
        let y = self.forward::<ChaCha8Rng>(&mut g, x, t, c, None);
        Ok(g.value(y).clone())
    }
}
