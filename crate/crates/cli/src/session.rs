//! Immutable generation and edit sessions persisted under a data directory.
//!
//! Each session is a JSON document plus the decoded motion as a `DMMO` file.
//! Both are written to temporary names and renamed; the JSON goes last, so a
//! session is visible only once complete. Ids are fresh UUIDs and nothing is
//! ever rewritten, which makes every read of an id see one fixed record.

use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use dancemeld::fileio::write_atomic;
use dancemeld::hvqvae::LatentCodes;
use dancemeld::latent::EditOp;
use dancemeld::motion::Skeleton;
use dancemeld::Motion;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::pipeline::export_positions;

pub const API_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "DM_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "dancemeld-data";

/// `DM_DATA_DIR` when set, else `fallback`.
pub fn data_dir(fallback: Option<&Path>) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => fallback.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
    }
}

/// What is stored for a session besides its motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub v: u32,
    pub id: String,
    pub parent_id: Option<String>,
    pub music_id: String,
    pub created_at: DateTime<Utc>,
    pub codes: LatentCodes,
    /// Music beats in seconds, for overlays.
    pub beats: Vec<f64>,
    /// Operations that turned the parent into this session.
    #[serde(default)]
    pub ops: Vec<EditOp>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SessionMeta {
    pub fn new(music_id: String, codes: LatentCodes, beats: Vec<f64>) -> Self {
        Self {
            v: API_VERSION,
            id: Uuid::new_v4().to_string(),
            parent_id: None,
            music_id,
            created_at: Utc::now(),
            codes,
            beats,
            ops: Vec::new(),
            steps: None,
            seed: None,
        }
    }

    /// A new record derived from `self`.
    pub fn child(&self, codes: LatentCodes, ops: Vec<EditOp>, duration_s: f64) -> Self {
        Self {
            v: API_VERSION,
            id: Uuid::new_v4().to_string(),
            parent_id: Some(self.id.clone()),
            music_id: self.music_id.clone(),
            created_at: Utc::now(),
            codes,
            beats: self.beats.iter().copied().filter(|&t| t < duration_s).collect(),
            ops,
            steps: self.steps,
            seed: self.seed,
        }
    }
}

/// Session as served: the stored fields plus joint positions for playback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(flatten)]
    pub meta: SessionMeta,
    pub fps: u32,
    pub frames: usize,
    pub parents: Vec<Option<usize>>,
    /// `[frame][joint] = [x, y, z]`
    pub positions: Vec<Vec<[f32; 3]>>,
}

impl SessionRecord {
    pub fn new(meta: SessionMeta, motion: &Motion, skel: &Skeleton) -> Self {
        let e = export_positions(motion, skel);
        Self {
            meta,
            fps: e.fps,
            frames: e.frames,
            parents: e.parents,
            positions: e.positions,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(data_dir: &Path) -> anyhow::Result<Self> {
        let dir = data_dir.join("sessions");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir })
    }

    /// Only canonical UUIDs name sessions, so ids never escape the directory.
    fn paths(&self, id: &str) -> Option<(PathBuf, PathBuf)> {
        let id = Uuid::parse_str(id).ok()?.to_string();
        Some((self.dir.join(format!("{id}.json")), self.dir.join(format!("{id}.dmmo"))))
    }

    pub fn insert(&self, meta: &SessionMeta, motion: &Motion) -> anyhow::Result<()> {
        let (json, bin) = self.paths(&meta.id).context("session id is not a UUID")?;
        anyhow::ensure!(!json.exists(), "session {} already exists", meta.id);
        motion.save(&bin)?;
        write_atomic(&json, &serde_json::to_vec(meta)?)?;
        Ok(())
    }

    /// `None` for ids that were never stored.
    pub fn get(&self, id: &str) -> anyhow::Result<Option<(SessionMeta, Motion)>> {
        let Some((json, bin)) = self.paths(id) else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&json) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e).with_context(|| format!("reading {}", json.display())),
        };
        let meta: SessionMeta = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", json.display()))?;
        let motion = Motion::load(&bin)?;
        Ok(Some((meta, motion)))
    }

    /// Raw `DMMO` bytes of a stored session's motion.
    pub fn motion_bytes(&self, id: &str) -> anyhow::Result<Option<Vec<u8>>> {
        let Some((json, bin)) = self.paths(id) else {
            return Ok(None);
        };
        if !json.exists() {
            return Ok(None);
        }
        Ok(Some(std::fs::read(&bin).with_context(|| format!("reading {}", bin.display()))?))
    }

    pub fn all(&self) -> anyhow::Result<Vec<SessionMeta>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let bytes = std::fs::read(&path)?;
                out.push(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?);
            }
        }
        Ok(out)
    }
}
