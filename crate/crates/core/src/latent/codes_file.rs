//! JSON file holding one code sequence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::write_atomic;
use crate::hvqvae::LatentCodes;
use crate::motion::DEFAULT_FPS;

pub const CODES_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodesFile {
    pub version: u32,
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
    pub fps: u32,
    /// Frames per generation window.
    pub window: usize,
}

impl CodesFile {
    pub fn new(codes: &LatentCodes, window: usize) -> Self {
        Self {
            version: CODES_FILE_VERSION,
            top: codes.top.clone(),
            bottom: codes.bottom.clone(),
            fps: DEFAULT_FPS,
            window,
        }
    }

    pub fn codes(&self) -> LatentCodes {
        LatentCodes {
            top: self.top.clone(),
            bottom: self.bottom.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let f: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if f.version != CODES_FILE_VERSION {
            return Err(Error::Format(format!("unsupported codes file version {}", f.version)));
        }
        f.codes().check_ratio()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("codes serialize");
        write_atomic(path, &json)
    }
}
