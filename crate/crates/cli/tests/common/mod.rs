#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use dancemeld::diffusion::DenoiserConfig;
use dancemeld::hvqvae::HvqvaeConfig;
use dancemeld::{Prior, VqModel};
use dancemeld_cli::{router, AppState, Models};

pub const MUSIC_DIM: usize = 8;

pub fn tiny_vq_config() -> HvqvaeConfig {
    HvqvaeConfig {
        width: 8,
        code_dim: 8,
        bottom_codes: 16,
        top_codes: 8,
        bottom_blocks: 1,
        top_blocks: 1,
        music_dim: MUSIC_DIM,
        ..HvqvaeConfig::default()
    }
}

pub fn tiny_prior_config() -> DenoiserConfig {
    DenoiserConfig {
        layers: 1,
        heads: 2,
        latent_dim: 16,
        feed_forward: 32,
        dropout: 0.0,
        seq_len: 128,
        input_dim: 24,
        cond_dim: MUSIC_DIM,
    }
}

/// Untrained tiny checkpoints, written once per test binary.
pub fn tiny_checkpoints() -> &'static (PathBuf, PathBuf) {
    static CKPT: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    CKPT.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let vq = dir.join("vq.ckpt");
        let prior = dir.join("prior.ckpt");
        VqModel::new(tiny_vq_config(), 3).unwrap().save(&vq).unwrap();
        Prior::new(tiny_prior_config(), 100, 4).unwrap().save(&prior).unwrap();
        (vq, prior)
    })
}

pub struct Server {
    pub base: String,
    pub data: tempfile::TempDir,
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn data_dir(&self) -> &Path {
        self.data.path()
    }
}

/// Binds an ephemeral port and serves in the background.
pub async fn start(models: Option<Models>) -> Server {
    let data = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(models, data.path()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let app = router(state, None);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        data,
    }
}

pub async fn start_tiny() -> Server {
    let (vq, prior) = tiny_checkpoints();
    start(Some(Models::load(vq, prior).unwrap())).await
}
