//! One function per command-line stage. Every output file is written to a
//! temporary name and renamed into place.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context};
use dancemeld::checkpoint::Checkpoint;
use dancemeld::dataset::{
    generate_synthetic_corpus, load_corpus, save_corpus, window_iterator, Corpus, Split, SynthCorpusConfig,
    WindowSpec,
};
use dancemeld::diffusion::{generate_codes, LatentCorpus, PriorTrainConfig, PriorTrainer};
use dancemeld::fileio::write_atomic;
use dancemeld::hvqvae::{LatentCodes, VqTrainConfig, VqTrainer, BOTTOM_RATE, TOP_RATE};
use dancemeld::latent::{apply_edits, CodesFile, EditOp};
use dancemeld::metrics::{evaluate, GeneratedSample, MetricReport};
use dancemeld::motion::{forward_kinematics, Skeleton};
use dancemeld::music::{BeatTimes, MusicFeatureSequence};
use dancemeld::{Motion, Prior, Tensor, VqModel};
use serde::{Deserialize, Serialize};

use crate::config::{prior_preset, vq_preset, Preset};
use crate::music_source::{load_music, LoadedMusic, MusicSource};

pub const MOTION_FILE: &str = "motion.dmmo";
pub const CODES_FILE: &str = "codes.json";
pub const EXPORT_VERSION: u32 = 1;
/// Generations used for the diversity and Fréchet statistics.
pub const EVAL_SAMPLES: usize = 40;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

/// `<out>` with its extension replaced by `log.jsonl`.
pub fn log_path(out: &Path) -> PathBuf {
    out.with_extension("log.jsonl")
}

fn write_log<S: Serialize>(out: &Path, entries: &[S]) -> anyhow::Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    write_atomic(&log_path(out), text.as_bytes())?;
    Ok(())
}

pub fn synth_data(cfg: &SynthCorpusConfig, out: &Path) -> anyhow::Result<PathBuf> {
    let corpus = generate_synthetic_corpus(cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(save_corpus(&corpus, out)?)
}

fn corpus_music_dim(corpus: &Corpus) -> anyhow::Result<usize> {
    let clip = corpus.clips.first().context("corpus has no clips")?;
    Ok(clip.music.dim())
}

/// Trains the autoencoder. The music width always follows the corpus.
pub fn train_vqvae(corpus: &Corpus, mut cfg: VqTrainConfig, out: &Path) -> anyhow::Result<VqTrainer<f32>> {
    cfg.model.music_dim = corpus_music_dim(corpus)?;
    let mut t = VqTrainer::new(corpus, cfg)?;
    t.train(Some(out), |l| {
        log::info!(
            "vq epoch {} loss {:.5} rec {:.5} perplexity {:.1}/{:.1} ({:.1}s)",
            l.epoch,
            l.loss.total,
            l.loss.reconstruction,
            l.top_perplexity,
            l.bottom_perplexity,
            l.seconds
        );
    })?;
    write_log(out, &t.log)?;
    Ok(t)
}

/// Trains the prior on latents of the frozen autoencoder. Input and
/// condition widths always follow the autoencoder.
pub fn train_prior(
    corpus: &Corpus,
    vq: &VqModel,
    window: WindowSpec,
    mut cfg: PriorTrainConfig,
    out: &Path,
) -> anyhow::Result<PriorTrainer<f32>> {
    cfg.denoiser.input_dim = 3 * vq.config.code_dim;
    cfg.denoiser.cond_dim = vq.config.music_dim;
    ensure!(
        cfg.denoiser.window_frames() == window.length,
        "prior covers {} frames per window but training windows have {}",
        cfg.denoiser.window_frames(),
        window.length
    );
    let data = LatentCorpus::from_corpus(vq, corpus, Split::Train, window)?;
    let mut t = PriorTrainer::new(&data, cfg)?;
    t.train(Some(out), |l| log::info!("prior epoch {} loss {:.5} ({:.1}s)", l.epoch, l.loss, l.seconds))?;
    write_log(out, &t.log)?;
    Ok(t)
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub music: LoadedMusic,
    pub codes: LatentCodes,
    pub motion: Motion,
}

pub fn generate(
    vq: &VqModel,
    prior: &Prior,
    music: &MusicSource,
    windows: usize,
    steps: usize,
    seed: u64,
) -> anyhow::Result<GenerationOutput> {
    let window = prior.config.window_frames();
    let music = load_music(music, prior.config.cond_dim, window, windows, seed)?;
    let codes = generate_codes(&music.features, vq, prior, steps, seed)?;
    let motion = vq.decode_codes(&codes)?;
    Ok(GenerationOutput { music, codes, motion })
}

/// Writes `motion.dmmo` and `codes.json` under `dir`.
pub fn save_generation(dir: &Path, codes: &LatentCodes, motion: &Motion, window: usize) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    motion.save(&dir.join(MOTION_FILE))?;
    CodesFile::new(codes, window).save(&dir.join(CODES_FILE))?;
    Ok(())
}

/// Test-split windows and, cycling through them, `samples` generations
/// conditioned on their music, all sampled in one batch.
pub fn evaluate_models(
    vq: &VqModel,
    prior: &Prior,
    corpus: &Corpus,
    samples: usize,
    steps: usize,
    seed: u64,
) -> anyhow::Result<MetricReport> {
    let window = prior.config.window_frames();
    let ws = WindowSpec {
        length: window,
        stride: window,
    };
    let mut real = Vec::new();
    let mut music = Vec::new();
    for clip in corpus.split(Split::Test) {
        let fps = clip.motion.fps as f64;
        for w in window_iterator(clip, ws)? {
            let start = w.start as f64 / fps;
            let beats = clip.beats.window(start, start + window as f64 / fps);
            real.push(w.motion);
            music.push((w.music, beats));
        }
    }
    ensure!(!music.is_empty(), "the test split has no {window}-frame windows");
    let picked: Vec<&(MusicFeatureSequence<f32>, BeatTimes)> = music.iter().cycle().take(samples).collect();
    let dim = prior.config.cond_dim;
    let mut data = Vec::with_capacity(samples * window * dim);
    for (m, _) in &picked {
        data.extend_from_slice(m.features().data());
    }
    let all = MusicFeatureSequence::new(Tensor::new(&[samples * window, dim], data))?;
    let codes = generate_codes(&all, vq, prior, steps, seed)?;
    let (tn, bn) = (window / TOP_RATE, window / BOTTOM_RATE);
    let mut motions = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = LatentCodes {
            top: codes.top[i * tn..(i + 1) * tn].to_vec(),
            bottom: codes.bottom[i * bn..(i + 1) * bn].to_vec(),
        };
        motions.push(vq.decode_codes(&c)?);
    }
    let generated: Vec<GeneratedSample<'_, f32>> = motions
        .iter()
        .zip(&picked)
        .map(|(m, (_, beats))| GeneratedSample {
            motion: m,
            music_beats: beats,
        })
        .collect();
    Ok(evaluate(&real, &generated, &corpus.skeleton)?)
}

/// A bare list of operations or `{"v": 1, "ops": [...]}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum OpsDocument {
    List(Vec<EditOp>),
    Versioned { v: u32, ops: Vec<EditOp> },
}

impl OpsDocument {
    pub fn into_ops(self) -> anyhow::Result<Vec<EditOp>> {
        match self {
            Self::List(ops) => Ok(ops),
            Self::Versioned { v, ops } => {
                ensure!(v == 1, "unsupported ops document version {v}");
                Ok(ops)
            }
        }
    }
}

pub fn read_ops(path: &Path) -> anyhow::Result<Vec<EditOp>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: OpsDocument = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    doc.into_ops()
}

/// Applies `ops` to a codes file and decodes the result.
pub fn edit(codes: &CodesFile, ops: &[EditOp], vq: &VqModel) -> anyhow::Result<(CodesFile, Motion)> {
    let (edited, motion) = apply_edits(&codes.codes(), ops, vq)?;
    let mut out = CodesFile::new(&edited, codes.window);
    out.fps = codes.fps;
    Ok((out, motion))
}

/// Joint positions for viewers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionsExport {
    pub v: u32,
    pub fps: u32,
    pub frames: usize,
    pub parents: Vec<Option<usize>>,
    /// `[frame][joint] = [x, y, z]` in metres.
    pub positions: Vec<Vec<[f32; 3]>>,
}

pub fn export_positions(motion: &Motion, skel: &Skeleton) -> PositionsExport {
    let pos = forward_kinematics(motion, skel);
    let joints = skel.joint_count();
    PositionsExport {
        v: EXPORT_VERSION,
        fps: motion.fps,
        frames: motion.len(),
        parents: (0..joints).map(|j| skel.parent(j)).collect(),
        positions: (0..pos.len()).map(|i| (0..joints).map(|j| pos.get(i, j)).collect()).collect(),
    }
}

pub fn load_vq(path: &Path) -> anyhow::Result<VqModel> {
    VqModel::from_checkpoint(&Checkpoint::load(path)?).with_context(|| format!("loading autoencoder {}", path.display()))
}

pub fn load_prior(path: &Path) -> anyhow::Result<Prior> {
    Prior::from_checkpoint(&Checkpoint::load(path)?).with_context(|| format!("loading prior {}", path.display()))
}

/// Reduced end-to-end run: corpus, both models, one generation, metrics.
#[derive(Clone, Debug)]
pub struct SmokeConfig {
    pub corpus: SynthCorpusConfig,
    pub vq: VqTrainConfig,
    pub prior: PriorTrainConfig,
    pub click_bpm: f64,
    pub eval_samples: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        let music_dim = 32;
        let vq = vq_preset(Preset::Smoke, music_dim);
        let prior = prior_preset(Preset::Smoke, vq.model.code_dim, music_dim);
        Self {
            corpus: SynthCorpusConfig {
                music_dim,
                ..SynthCorpusConfig::default()
            },
            vq,
            prior,
            click_bpm: 120.0,
            eval_samples: EVAL_SAMPLES,
            steps: DEFAULT_SAMPLING_STEPS,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SmokeArtifacts {
    pub corpus: PathBuf,
    pub vq: PathBuf,
    pub prior: PathBuf,
    pub generation: PathBuf,
    pub report: PathBuf,
    pub metrics: MetricReport,
    /// Wall time of each stage.
    pub timings: Vec<(&'static str, f64)>,
}

impl SmokeArtifacts {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.1).sum()
    }
}

pub fn run_smoke(dir: &Path, cfg: &SmokeConfig) -> anyhow::Result<SmokeArtifacts> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let manifest = synth_data(&cfg.corpus, &dir.join("corpus"))?;
    let corpus = load_corpus(&manifest)?;
    lap("synth-data", &mut timings);

    let vq_path = dir.join("vq.ckpt");
    let vq = train_vqvae(&corpus, cfg.vq.clone(), &vq_path)?.model;
    lap("train-vqvae", &mut timings);

    let prior_path = dir.join("prior.ckpt");
    let prior = train_prior(&corpus, &vq, cfg.vq.window, cfg.prior.clone(), &prior_path)?.prior;
    lap("train-prior", &mut timings);

    let generation = dir.join("generation");
    let g = generate(&vq, &prior, &MusicSource::Click(cfg.click_bpm), 1, cfg.steps, cfg.seed)?;
    save_generation(&generation, &g.codes, &g.motion, prior.config.window_frames())?;
    lap("generate", &mut timings);

    let metrics = evaluate_models(&vq, &prior, &corpus, cfg.eval_samples, cfg.steps, cfg.seed)?;
    let report = dir.join("metrics.json");
    write_json(&report, &metrics)?;
    lap("eval", &mut timings);

    Ok(SmokeArtifacts {
        corpus: manifest,
        vq: vq_path,
        prior: prior_path,
        generation,
        report,
        metrics,
        timings,
    })
}

pub fn save_report(path: &Path, report: &MetricReport) -> anyhow::Result<()> {
    write_json(path, report)
}

pub fn save_export(path: &Path, export: &PositionsExport) -> anyhow::Result<()> {
    write_json(path, export)
}
