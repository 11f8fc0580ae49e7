use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dancemeld::dataset::{load_corpus, SynthCorpusConfig};
use dancemeld::latent::CodesFile;
use dancemeld::motion::Skeleton;
use dancemeld::Motion;
use dancemeld_cli::config::{prior_preset, vq_preset, with_overrides, Preset};
use dancemeld_cli::pipeline::{self, DEFAULT_SAMPLING_STEPS, EVAL_SAMPLES};
use dancemeld_cli::{service, session, MusicSource, SmokeConfig};

#[derive(Parser)]
#[command(name = "dancemeld", version, about = "Music-to-dance generation with editable latent codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired motion/music corpus.
    SynthData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        clips: usize,
        /// Width of the music features.
        #[arg(long, default_value_t = dancemeld::music::DEFAULT_MUSIC_DIM)]
        music_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-level autoencoder.
    TrainVqvae {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON file overriding fields of the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Smoke)]
        preset: Preset,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diffusion prior on latents of a frozen autoencoder.
    TrainPrior {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Smoke)]
        preset: Preset,
        #[arg(long)]
        epochs: Option<usize>,
        /// Stride between training windows, in frames.
        #[arg(long, default_value_t = 40)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample motion for a piece of music; writes motion.dmmo and codes.json.
    Generate {
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// A feature file or click:BPM.
        #[arg(long)]
        music: String,
        /// Windows to generate; 0 means every whole window of a feature file.
        #[arg(long, default_value_t = 0)]
        windows: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLING_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generations against the test split.
    Eval {
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = EVAL_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLING_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply edit operations to a codes file; writes codes.json and motion.dmmo.
    Edit {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        ops: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a motion file to joint positions.
    Export {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Json)]
        format: ExportFormat,
        /// Skeleton JSON; the built-in humanoid by default.
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        vq: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of UI assets served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Session storage; DM_DATA_DIR takes precedence.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Reduced end-to-end run: corpus, both models, a generation and metrics.
    Smoke {
        #[arg(long)]
        out: PathBuf,
    },
}

fn skeleton(path: Option<&Path>) -> anyhow::Result<Skeleton> {
    Ok(match path {
        Some(p) => Skeleton::load(p)?,
        None => Skeleton::humanoid(),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthData {
            seed,
            clips,
            music_dim,
            out,
        } => {
            let cfg = SynthCorpusConfig {
                seed,
                clips,
                music_dim,
                ..SynthCorpusConfig::default()
            };
            let manifest = pipeline::synth_data(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::TrainVqvae {
            corpus,
            config,
            preset,
            epochs,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let dim = corpus.clips.first().map_or(0, |c| c.music.dim());
            let mut cfg = with_overrides(&vq_preset(preset, dim), config.as_deref())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let t = pipeline::train_vqvae(&corpus, cfg, &out)?;
            println!("{}", out.display());
            if let Some(l) = t.log.last() {
                log::info!("final loss {:.5}", l.loss.total);
            }
        }
        Command::TrainPrior {
            corpus,
            vq,
            config,
            preset,
            epochs,
            stride,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let vq = pipeline::load_vq(&vq)?;
            let defaults = prior_preset(preset, vq.config.code_dim, vq.config.music_dim);
            let mut cfg = with_overrides(&defaults, config.as_deref())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let window = dancemeld::dataset::WindowSpec {
                length: cfg.denoiser.window_frames(),
                stride,
            };
            pipeline::train_prior(&corpus, &vq, window, cfg, &out)?;
            println!("{}", out.display());
        }
        Command::Generate {
            vq,
            prior,
            music,
            windows,
            steps,
            seed,
            out,
        } => {
            let (vq, prior) = (pipeline::load_vq(&vq)?, pipeline::load_prior(&prior)?);
            let music: MusicSource = music.parse()?;
            let g = pipeline::generate(&vq, &prior, &music, windows, steps, seed)?;
            pipeline::save_generation(&out, &g.codes, &g.motion, prior.config.window_frames())?;
            println!("{}", out.display());
        }
        Command::Eval {
            vq,
            prior,
            corpus,
            samples,
            steps,
            seed,
            out,
        } => {
            let (vq, prior) = (pipeline::load_vq(&vq)?, pipeline::load_prior(&prior)?);
            let corpus = load_corpus(&corpus)?;
            let report = pipeline::evaluate_models(&vq, &prior, &corpus, samples, steps, seed)?;
            pipeline::save_report(&out, &report)?;
            print!("{}", report.to_table());
        }
        Command::Edit { codes, ops, vq, out } => {
            let codes = CodesFile::load(&codes)?;
            let ops = pipeline::read_ops(&ops)?;
            let vq = pipeline::load_vq(&vq)?;
            let (edited, motion) = pipeline::edit(&codes, &ops, &vq)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            motion.save(&out.join(pipeline::MOTION_FILE))?;
            edited.save(&out.join(pipeline::CODES_FILE))?;
            println!("{}", out.display());
        }
        Command::Export {
            motion,
            format: ExportFormat::Json,
            skeleton: skel,
            out,
        } => {
            let motion = Motion::load(&motion)?;
            let export = pipeline::export_positions(&motion, &skeleton(skel.as_deref())?);
            match out {
                Some(path) => pipeline::save_export(&path, &export)?,
                None => println!("{}", serde_json::to_string(&export)?),
            }
        }
        Command::Serve {
            vq,
            prior,
            port,
            host,
            static_dir,
            data_dir,
        } => {
            let models = match (vq, prior) {
                (Some(v), Some(p)) => Some(service::Models::load(&v, &p)?),
                (None, None) => {
                    log::warn!("starting without models; generation and editing answer 409");
                    None
                }
                _ => anyhow::bail!("--vq and --prior must be given together"),
            };
            let dir = session::data_dir(data_dir.as_deref());
            let state = Arc::new(service::AppState::new(models, &dir)?);
            let app = service::router(state, static_dir.as_deref());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                service::serve(listener, app).await
            })?;
        }
        Command::Smoke { out } => {
            let a = dancemeld_cli::run_smoke(&out, &SmokeConfig::default())?;
            for (stage, s) in &a.timings {
                println!("{stage:<12} {s:>8.1} s");
            }
            print!("{}", a.metrics.to_table());
        }
    }
    Ok(())
}

/// One JSON line on stderr naming the error kind.
fn report(e: &anyhow::Error) {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<dancemeld::Error>())
        .map_or("Error", |c| c.kind());
    let body = serde_json::json!({"error": kind, "message": format!("{e:#}")});
    eprintln!("{body}");
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        report(&e);
        std::process::exit(1);
    }
}
