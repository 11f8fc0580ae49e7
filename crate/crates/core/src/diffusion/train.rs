//! Prior training over latents of a frozen autoencoder.

use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{DenoiserConfig, DiffusionPrior, COND_POOL};
use super::latents::{pack, LatentStats};
use super::schedule::NoiseSchedule;
use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::dataset::{window_iterator, Corpus, Split, WindowSpec};
use crate::error::{Error, Result};
use crate::hvqvae::Hvqvae;
use crate::motion::MotionSequence;
use crate::nn::{Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PRIOR_KIND: &str = "prior";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainConfig {
    pub denoiser: DenoiserConfig,
    pub diffusion_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            diffusion_steps: 1000,
            epochs: 500,
            batch_size: 32,
            lr: 4e-4,
            seed: 0,
            clip_norm: None,
        }
    }
}

/// Packed latents `[L, 3D]` with their pooled music `[L, cond_dim]`.
#[derive(Clone, Debug, Default)]
pub struct LatentCorpus<T> {
    pub latents: Vec<Tensor<T>>,
    pub cond: Vec<Tensor<T>>,
}

impl<T: Scalar> LatentCorpus<T> {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    /// Runs the frozen autoencoder over every window of `split`.
    pub fn from_corpus(vq: &Hvqvae<T>, corpus: &Corpus, split: Split, window: WindowSpec) -> Result<Self> {
        let mut out = Self::default();
        for clip in corpus.split(split) {
            for w in window_iterator(clip, window)? {
                let m: MotionSequence<T> = w.motion.cast();
                let enc = vq.encode_full(&m)?;
                out.latents.push(pack(&enc.h_b_prime, &enc.features.h_t)?);
                out.cond.push(w.music.cast::<T>().pooled(COND_POOL));
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument(format!("no {split:?} windows in the corpus")));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// Resumable prior optimisation. Latents are standardised once at
/// construction with statistics fitted on the whole corpus.
pub struct PriorTrainer<T: Scalar> {
    pub prior: DiffusionPrior<T>,
    pub cfg: PriorTrainConfig,
    pub log: Vec<PriorEpochLog>,
    opt: Optimizer<T>,
    latents: Vec<Tensor<T>>,
    cond: Vec<Tensor<T>>,
    epoch: usize,
}

impl<T: Scalar> PriorTrainer<T> {
    pub fn new(data: &LatentCorpus<T>, cfg: PriorTrainConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if data.is_empty() || data.latents.len() != data.cond.len() {
            return Err(Error::InvalidArgument("latent corpus is empty or unpaired".into()));
        }
        let mut prior = DiffusionPrior::new(cfg.denoiser.clone(), cfg.diffusion_steps, cfg.seed)?;
        for (h, c) in data.latents.iter().zip(&data.cond) {
            let (hs, cs) = (h.shape(), c.shape());
            prior.check_shapes(&[1, hs[0], hs[1]], &[1, cs[0], cs[1]], 1)?;
        }
        prior.stats = LatentStats::fit(&data.latents)?;
        let latents = data
            .latents
            .iter()
            .map(|h| prior.stats.standardize(h))
            .collect::<Result<Vec<_>>>()?;
        let mut opt = Optimizer::new(OptimizerKind::Adan, cfg.lr);
        opt.clip_norm = cfg.clip_norm;
        Ok(Self {
            prior,
            log: Vec::new(),
            opt,
            latents,
            cond: data.cond.clone(),
            epoch: 0,
            cfg,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Standardised training latents.
    pub fn latents(&self) -> &[Tensor<T>] {
        &self.latents
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (0xd1ff_u64 << 40) ^ epoch as u64)
    }

    /// Loss of one batch; applies the update when the loss is finite.
    fn step(&mut self, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<f64> {
        let schedule: &NoiseSchedule = &self.prior.schedule;
        let h0 = Tensor::stack(&idx.iter().map(|&i| self.latents[i].clone()).collect::<Vec<_>>());
        let cond = Tensor::stack(&idx.iter().map(|&i| self.cond[i].clone()).collect::<Vec<_>>());
        let t: Vec<usize> = idx.iter().map(|_| rng.random_range(0..schedule.steps)).collect();
        let noise = Tensor::<T>::randn(h0.shape(), 1.0, rng);
        let noisy = schedule.q_sample_batch(&h0, &t, &noise)?;
        let (loss, mut grads) = {
            let mut g = Graph::new(&self.prior.store);
            let x = g.constant(noisy);
            let c = g.constant(cond);
            let target = g.constant(h0);
            let pred = self.prior.forward(&mut g, x, &t, c, Some(rng));
            let l = g.mse(pred, target);
            let loss = g.value(l).item().as_f64();
            let grads = if loss.is_finite() {
                g.backward(l).into_param_grads()
            } else {
                Vec::new()
            };
            (loss, grads)
        };
        if loss.is_finite() {
            self.opt.step(&mut self.prior.store, &mut grads);
        }
        Ok(loss)
    }

    pub fn run_epoch(&mut self) -> Result<PriorEpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..self.latents.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let l = self.step(chunk, &mut rng)?;
            if !l.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: l });
            }
            sum += l;
            batches += 1;
        }
        let log = PriorEpochLog {
            epoch,
            loss: sum / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!("prior epoch {epoch}: loss {:.5} ({:.1}s)", log.loss, log.seconds);
        self.log.push(log.clone());
        self.epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, checkpointing to `out` after each one and
    /// before returning a divergence error.
    pub fn train(&mut self, out: Option<&Path>, mut on_epoch: impl FnMut(&PriorEpochLog)) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            match self.run_epoch() {
                Ok(log) => {
                    on_epoch(&log);
                    if let Some(p) = out {
                        self.checkpoint().save(p)?;
                    }
                }
                Err(e @ Error::DivergenceDetected { .. }) => {
                    if let Some(p) = out {
                        self.checkpoint().save(p)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = prior_checkpoint(&self.prior);
        c.set_meta("train_config", &self.cfg);
        c.set_meta("epoch", &self.epoch);
        c.set_meta("log", &self.log);
        c.put_optimizer("opt.", &self.opt, &self.prior.store);
        c
    }

    /// Continues a run; `data` must be the corpus the run started from.
    pub fn resume(data: &LatentCorpus<T>, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(PRIOR_KIND)?;
        let cfg: PriorTrainConfig = ckpt.meta("train_config")?;
        let mut t = Self::new(data, cfg)?;
        let saved: LatentStats = ckpt.meta("stats")?;
        if saved != t.prior.stats {
            t.prior.stats = saved;
            t.latents = data
                .latents
                .iter()
                .map(|h| t.prior.stats.standardize(h))
                .collect::<Result<Vec<_>>>()?;
        }
        ckpt.restore_store("model.", &mut t.prior.store)?;
        ckpt.restore_optimizer("opt.", &mut t.opt, &t.prior.store)?;
        t.epoch = ckpt.meta("epoch")?;
        t.log = ckpt.meta("log")?;
        Ok(t)
    }
}

/// Inference checkpoint: config, schedule, latent statistics and parameters.
pub fn prior_checkpoint<T: Scalar>(prior: &DiffusionPrior<T>) -> Checkpoint {
    let mut c = Checkpoint::new(PRIOR_KIND);
    c.set_meta("config", &prior.config);
    c.set_meta("schedule", &prior.schedule);
    c.set_meta("stats", &prior.stats);
    c.put_store("model.", &prior.store);
    c
}

impl<T: Scalar> DiffusionPrior<T> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(PRIOR_KIND)?;
        let config: DenoiserConfig = ckpt.meta("config")?;
        let schedule: NoiseSchedule = ckpt.meta("schedule")?;
        let mut prior = Self::new(config, schedule.steps, 0)?;
        prior.schedule = schedule;
        prior.stats = ckpt.meta("stats")?;
        if prior.stats.channels() != prior.config.input_dim {
            return Err(Error::Format("latent statistics do not match the input width".into()));
        }
        ckpt.restore_store("model.", &mut prior.store)?;
        Ok(prior)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        prior_checkpoint(self).save(path)
    }
}

pub fn train_prior<T: Scalar>(
    data: &LatentCorpus<T>,
    cfg: PriorTrainConfig,
    out: Option<&Path>,
    on_epoch: impl FnMut(&PriorEpochLog),
) -> Result<PriorTrainer<T>> {
    let mut t = PriorTrainer::new(data, cfg)?;
    t.train(out, on_epoch)?;
    Ok(t)
}
