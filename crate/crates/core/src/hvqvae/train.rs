//! Autoencoder training loop with data-initialised codebooks and dead-code
//! re-seeding.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::VqTrainConfig;
use super::loss::{ContactMask, LossValues, Objective};
use super::model::{Hvqvae, LatentCodes, MotionNorm};
use super::quantizer::perplexity;
use crate::checkpoint::Checkpoint;
use crate::dataset::{window_iterator, Corpus, Split};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::motion::{
    detect_foot_contacts, forward_kinematics, FkOp, FootContactLabels, MotionSequence, Skeleton, MOTION_DIM,
};
use crate::nn::{Optimizer, OptimizerKind, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const HVQVAE_KIND: &str = "hvqvae";

/// Training windows with their contact labels.
#[derive(Clone, Debug)]
pub struct TrainingWindows<T> {
    /// `[N, 147]` each.
    pub motion: Vec<Tensor<T>>,
    /// `[N, music_dim]` each.
    pub music: Vec<Tensor<T>>,
    pub contacts: Vec<FootContactLabels>,
}

impl<T: Scalar> TrainingWindows<T> {
    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }

    /// Windows of every clip in `split`. Contact labels are computed per clip
    /// so the floor height is the clip's, not the window's.
    pub fn from_corpus(corpus: &Corpus, split: Split, cfg: &VqTrainConfig) -> Result<Self> {
        let mut out = Self {
            motion: Vec::new(),
            music: Vec::new(),
            contacts: Vec::new(),
        };
        for clip in corpus.split(split) {
            if clip.music.dim() != cfg.model.music_dim {
                return Err(Error::DimMismatch {
                    expected: cfg.model.music_dim,
                    got: clip.music.dim(),
                });
            }
            let pos = forward_kinematics(&clip.motion, &corpus.skeleton);
            let labels = detect_foot_contacts(&pos, &corpus.skeleton, cfg.contacts)?;
            let feet = labels.feet();
            for w in window_iterator(clip, cfg.window)? {
                out.motion.push(w.motion.frames().cast());
                out.music.push(w.music.features().cast());
                let s = w.start * feet;
                out.contacts.push(FootContactLabels {
                    labels: labels.labels[s..s + cfg.window.length * feet].to_vec(),
                    frames: cfg.window.length,
                    foot_joints: labels.foot_joints.clone(),
                });
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument(format!("no {split:?} windows in the corpus")));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossValues,
    pub top_perplexity: f64,
    pub bottom_perplexity: f64,
    pub top_used: usize,
    pub bottom_used: usize,
    pub top_reseeded: usize,
    pub bottom_reseeded: usize,
    pub seconds: f64,
}

/// Resumable optimisation state.
pub struct VqTrainer<T: Scalar> {
    pub model: Hvqvae<T>,
    pub cfg: VqTrainConfig,
    pub log: Vec<EpochLog>,
    opt: Optimizer<T>,
    fk: Arc<FkOp<T>>,
    skeleton: Skeleton,
    data: TrainingWindows<T>,
    epoch: usize,
    initialized: bool,
    top_last_used: Vec<i64>,
    bottom_last_used: Vec<i64>,
}

struct Batch<T> {
    x: Tensor<T>,
    music: Tensor<T>,
    mask: ContactMask<T>,
}

impl<T: Scalar> VqTrainer<T> {
    pub fn new(corpus: &Corpus, cfg: VqTrainConfig) -> Result<Self> {
        cfg.window.validate()?;
        cfg.weights.validate()?;
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut model = Hvqvae::new(cfg.model.clone(), cfg.seed)?;
        let data = TrainingWindows::from_corpus(corpus, Split::Train, &cfg)?;
        model.norm = MotionNorm::fit(&data.motion);
        let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr);
        opt.clip_norm = cfg.clip_norm;
        Ok(Self {
            top_last_used: vec![-1; cfg.model.top_codes],
            bottom_last_used: vec![-1; cfg.model.bottom_codes],
            fk: Arc::new(FkOp::new(&corpus.skeleton)),
            skeleton: corpus.skeleton.clone(),
            model,
            cfg,
            log: Vec::new(),
            opt,
            data,
            epoch: 0,
            initialized: false,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn windows(&self) -> &TrainingWindows<T> {
        &self.data
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch<T>> {
        let x = Tensor::stack(&idx.iter().map(|&i| self.data.motion[i].clone()).collect::<Vec<_>>());
        let music = Tensor::stack(&idx.iter().map(|&i| self.data.music[i].clone()).collect::<Vec<_>>());
        let labels: Vec<FootContactLabels> = idx.iter().map(|&i| self.data.contacts[i].clone()).collect();
        Ok(Batch {
            x,
            music,
            mask: ContactMask::from_labels(&labels)?,
        })
    }

    fn order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (0xe90c_u64 << 32) ^ epoch as u64);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Encoder outputs `(h_t rows, P(h_b') rows)` for a batch, as `[rows, D]`.
    fn encoder_rows(&self, b: &Batch<T>) -> (Tensor<T>, Tensor<T>) {
        let mut g = Graph::new(&self.model.store);
        let x = g.constant(b.x.clone());
        let f = self.model.forward(&mut g, x, None);
        let d = self.model.config.code_dim;
        let ht = g.value(f.h_t).clone();
        let p = g.value(f.projected).clone();
        let (rt, rp) = (ht.len() / d, p.len() / d);
        (ht.reshape(&[rt, d]), p.reshape(&[rp, d]))
    }

    fn seed_rows(rows: &Tensor<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
        let n = rows.shape()[0];
        let mut pick: Vec<usize> = (0..n).collect();
        pick.shuffle(rng);
        let scale = rows.data().iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max).max(1e-3);
        (0..k)
            .map(|j| {
                let src = rows.row(pick[j % n]);
                if j < n {
                    src.to_vec()
                } else {
                    src.iter().map(|&v| v + T::lit(1e-3 * scale * (rng.random::<f64>() - 0.5))).collect()
                }
            })
            .collect()
    }

    fn set_rows(&mut self, id: ParamId, which: &[usize], rows: Vec<Vec<T>>) {
        let t = self.model.store.get_mut(id);
        for (&k, r) in which.iter().zip(rows) {
            t.row_mut(k).copy_from_slice(&r);
        }
    }

    /// Codebooks start as random encoder outputs of the first batch.
    fn init_codebooks(&mut self, b: &Batch<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xc0de);
        let (ht, _) = self.encoder_rows(b);
        let kt = self.model.config.top_codes;
        let rows = Self::seed_rows(&ht, kt, &mut rng);
        self.set_rows(self.model.net.top_codebook, &(0..kt).collect::<Vec<_>>(), rows);
        let (_, p) = self.encoder_rows(b);
        let kb = self.model.config.bottom_codes;
        let rows = Self::seed_rows(&p, kb, &mut rng);
        self.set_rows(self.model.net.bottom_codebook, &(0..kb).collect::<Vec<_>>(), rows);
        self.initialized = true;
    }

    /// One optimisation step; returns the loss values and code indices.
    fn step(&mut self, b: &Batch<T>) -> Result<(LossValues, Vec<usize>, Vec<usize>)> {
        let (values, top, bottom, mut grads) = {
            let mut g = Graph::new(&self.model.store);
            let x = g.constant(b.x.clone());
            let m = g.constant(b.music.clone());
            let f = self.model.forward(&mut g, x, Some(m));
            let obj = Objective::build(&mut g, x, &f, &b.mask, &self.fk, &self.cfg.weights)?;
            let values = obj.values(&g);
            let grads = if values.total.is_finite() {
                g.backward(obj.total).into_param_grads()
            } else {
                Vec::new()
            };
            (values, f.top_idx, f.bottom_idx, grads)
        };
        if values.total.is_finite() {
            self.opt.step(&mut self.model.store, &mut grads);
        }
        Ok((values, top, bottom))
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        let order = self.order(epoch);
        let bs = self.cfg.batch_size;
        let mut sum = LossValues::default();
        let mut top_all = Vec::new();
        let mut bottom_all = Vec::new();
        let mut batches = 0usize;
        let mut last: Option<Batch<T>> = None;
        for chunk in order.chunks(bs) {
            let b = self.batch(chunk)?;
            if !self.initialized {
                self.init_codebooks(&b);
            }
            let (v, top, bottom) = self.step(&b)?;
            if !v.total.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: v.total });
            }
            sum.add_scaled(&v, 1.0);
            top_all.extend(top);
            bottom_all.extend(bottom);
            batches += 1;
            last = Some(b);
        }
        let mut loss = LossValues::default();
        loss.add_scaled(&sum, 1.0 / batches as f64);

        let e = epoch as i64;
        for &k in &top_all {
            self.top_last_used[k] = e;
        }
        for &k in &bottom_all {
            self.bottom_last_used[k] = e;
        }
        let limit = self.cfg.dead_code_epochs as i64;
        let dead = |v: &[i64]| -> Vec<usize> {
            if limit == 0 {
                return Vec::new();
            }
            (0..v.len()).filter(|&k| e - v[k] >= limit).collect()
        };
        let dead_top = dead(&self.top_last_used);
        let dead_bottom = dead(&self.bottom_last_used);
        if let Some(b) = last.filter(|_| !dead_top.is_empty() || !dead_bottom.is_empty()) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xdead ^ ((epoch as u64) << 16));
            let (ht, p) = self.encoder_rows(&b);
            let rows = Self::seed_rows(&ht, dead_top.len(), &mut rng);
            self.set_rows(self.model.net.top_codebook, &dead_top, rows);
            let rows = Self::seed_rows(&p, dead_bottom.len(), &mut rng);
            self.set_rows(self.model.net.bottom_codebook, &dead_bottom, rows);
            for &k in &dead_top {
                self.top_last_used[k] = e;
            }
            for &k in &dead_bottom {
                self.bottom_last_used[k] = e;
            }
        }

        let distinct = |v: &[usize], k: usize| {
            let mut seen = vec![false; k];
            v.iter().for_each(|&i| seen[i] = true);
            seen.iter().filter(|&&s| s).count()
        };
        let log = EpochLog {
            epoch,
            loss,
            top_perplexity: perplexity(&top_all, self.model.config.top_codes),
            bottom_perplexity: perplexity(&bottom_all, self.model.config.bottom_codes),
            top_used: distinct(&top_all, self.model.config.top_codes),
            bottom_used: distinct(&bottom_all, self.model.config.bottom_codes),
            top_reseeded: dead_top.len(),
            bottom_reseeded: dead_bottom.len(),
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "vq epoch {epoch}: loss {:.5} recon {:.5} aux {:.5} ma {:.5} ppl top {:.1} bottom {:.1}",
            log.loss.total, log.loss.reconstruction, log.loss.aux, log.loss.ma, log.top_perplexity, log.bottom_perplexity
        );
        self.log.push(log.clone());
        self.epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, checkpointing to `out` after each one and
    /// before returning a divergence error.
    pub fn train(&mut self, out: Option<&Path>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<()> {
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
        let mut c = model_checkpoint(&self.model, &self.cfg.weights);
        c.set_meta("train_config", &self.cfg);
        c.set_meta("epoch", &self.epoch);
        c.set_meta("initialized", &self.initialized);
        c.set_meta("top_last_used", &self.top_last_used);
        c.set_meta("bottom_last_used", &self.bottom_last_used);
        c.set_meta("log", &self.log);
        c.put_optimizer("opt.", &self.opt, &self.model.store);
        c
    }

    /// Continues a run from a checkpoint written by [`VqTrainer::checkpoint`].
    pub fn resume(corpus: &Corpus, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(HVQVAE_KIND)?;
        let cfg: VqTrainConfig = ckpt.meta("train_config")?;
        let mut t = Self::new(corpus, cfg)?;
        ckpt.restore_store("model.", &mut t.model.store)?;
        t.model.norm = ckpt.meta("norm")?;
        ckpt.restore_optimizer("opt.", &mut t.opt, &t.model.store)?;
        t.epoch = ckpt.meta("epoch")?;
        t.initialized = ckpt.meta("initialized")?;
        t.top_last_used = ckpt.meta("top_last_used")?;
        t.bottom_last_used = ckpt.meta("bottom_last_used")?;
        t.log = ckpt.meta("log")?;
        Ok(t)
    }

    /// Mean per-joint position error of reconstructions over a window sample.
    pub fn reconstruction_mpjpe(&self, max_windows: usize) -> Result<f64> {
        let n = self.data.len().min(max_windows.max(1));
        let step = (self.data.len() / n).max(1);
        let mut total = 0.0;
        let mut count = 0usize;
        for i in (0..self.data.len()).step_by(step).take(n) {
            let m = MotionSequence::new(self.data.motion[i].clone(), crate::motion::DEFAULT_FPS)?;
            total += mpjpe(&m, &self.model.reconstruct(&m)?, &self.skeleton);
            count += 1;
        }
        Ok(total / count as f64)
    }
}

/// Inference-only checkpoint: configuration, loss weights and parameters.
pub fn model_checkpoint<T: Scalar>(model: &Hvqvae<T>, weights: &super::config::LossWeights) -> Checkpoint {
    let mut c = Checkpoint::new(HVQVAE_KIND);
    c.set_meta("config", &model.config);
    c.set_meta("weights", weights);
    c.set_meta("norm", &model.norm);
    c.put_store("model.", &model.store);
    c
}

impl<T: Scalar> Hvqvae<T> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(HVQVAE_KIND)?;
        let config = ckpt.meta("config")?;
        let mut model = Self::new(config, 0)?;
        model.norm = ckpt.meta("norm")?;
        ckpt.restore_store("model.", &mut model.store)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        model_checkpoint(self, &super::config::LossWeights::default()).save(path)
    }
}

/// Mean Euclidean distance between corresponding joints, in metres.
pub fn mpjpe<T: Scalar>(a: &MotionSequence<T>, b: &MotionSequence<T>, skel: &Skeleton) -> f64 {
    let pa = forward_kinematics(a, skel);
    let pb = forward_kinematics(b, skel);
    let n = pa.len().min(pb.len());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..skel.joint_count() {
            let (x, y) = (pa.get(i, j), pb.get(i, j));
            total += (0..3).map(|c| (x[c] - y[c]).as_f64().powi(2)).sum::<f64>().sqrt();
        }
    }
    total / (n * skel.joint_count()).max(1) as f64
}

/// Trains from scratch. The returned trainer holds the model and the log.
pub fn train_vqvae<T: Scalar>(
    corpus: &Corpus,
    cfg: VqTrainConfig,
    out: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<VqTrainer<T>> {
    let mut t = VqTrainer::new(corpus, cfg)?;
    t.train(out, on_epoch)?;
    Ok(t)
}

/// Codes of every window in `split`, for inspection and the prior corpus.
pub fn encode_windows<T: Scalar>(
    model: &Hvqvae<T>,
    corpus: &Corpus,
    split: Split,
    window: crate::dataset::WindowSpec,
) -> Result<Vec<(String, usize, LatentCodes)>> {
    let mut out = Vec::new();
    for clip in corpus.split(split) {
        for w in window_iterator(clip, window)? {
            let m: MotionSequence<T> = w.motion.cast();
            debug_assert_eq!(m.frames().last_dim(), MOTION_DIM);
            out.push((w.clip_id.clone(), w.start, model.encode_codes(&m)?));
        }
    }
    Ok(out)
}
