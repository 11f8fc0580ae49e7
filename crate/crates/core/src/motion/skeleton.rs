use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 24;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Named joint indices of the built-in topology.
pub mod joints {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;
}

/// Kinematic tree with rest-pose offsets (metres, y-up, facing +z).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub name: String,
    /// Parent of each joint; the root uses -1.
    pub parents: Vec<i32>,
    /// Offset from the parent in the rest pose; for the root, from the translation.
    pub offsets: Vec<[f64; 3]>,
    /// Heels and toes.
    pub foot_joints: Vec<usize>,
}

impl Skeleton {
    /// Built-in 24-joint humanoid, about 1.7 m tall in a T-pose.
    pub fn humanoid() -> Self {
        let parents = vec![
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
        ];
        let offsets = vec![
            [0.0, 0.94, 0.0],
            [0.07, -0.09, 0.0],
            [-0.07, -0.09, 0.0],
            [0.0, 0.11, -0.02],
            [0.04, -0.38, 0.0],
            [-0.04, -0.38, 0.0],
            [0.0, 0.14, 0.0],
            [0.0, -0.40, -0.03],
            [0.0, -0.40, -0.03],
            [0.0, 0.06, 0.02],
            [0.0, -0.05, 0.13],
            [0.0, -0.05, 0.13],
            [0.0, 0.22, -0.02],
            [0.08, 0.12, 0.0],
            [-0.08, 0.12, 0.0],
            [0.0, 0.25, 0.04],
            [0.11, 0.03, 0.0],
            [-0.11, 0.03, 0.0],
            [0.26, 0.0, 0.0],
            [-0.26, 0.0, 0.0],
            [0.25, 0.0, 0.0],
            [-0.25, 0.0, 0.0],
            [0.08, 0.0, 0.0],
            [-0.08, 0.0, 0.0],
        ];
        Self {
            name: "humanoid24".to_string(),
            parents,
            offsets,
            foot_joints: vec![
                joints::L_ANKLE,
                joints::R_ANKLE,
                joints::L_FOOT,
                joints::R_FOOT,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("skeleton {}: {m}", self.name)));
        if self.parents.len() != JOINT_COUNT || self.offsets.len() != JOINT_COUNT {
            return bad(format!(
                "expected {JOINT_COUNT} joints, got {} parents / {} offsets",
                self.parents.len(),
                self.offsets.len()
            ));
        }
        if self.parents[0] != -1 {
            return bad("joint 0 must be the root (parent -1)".into());
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return bad(format!("joint {j} has parent {p}; parents must precede children"));
            }
        }
        if self.offsets.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite offset".into());
        }
        if let Some(&f) = self.foot_joints.iter().find(|&&f| f >= JOINT_COUNT) {
            return bad(format!("foot joint {f} out of range"));
        }
        Ok(())
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        let p = self.parents[j];
        (p >= 0).then_some(p as usize)
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Rest-pose world positions with zero translation.
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = Vec::with_capacity(self.joint_count());
        for j in 0..self.joint_count() {
            let o = self.offsets[j];
            let p = match self.parent(j) {
                Some(p) => out[p],
                None => [0.0; 3],
            };
            out.push([p[0] + o[0], p[1] + o[1], p[2] + o[2]]);
        }
        out
    }

    /// Vertical extent of the rest pose.
    pub fn height(&self) -> f64 {
        let ys: Vec<f64> = self.rest_positions().iter().map(|p| p[1]).collect();
        let max = ys.iter().cloned().fold(f64::MIN, f64::max);
        let min = ys.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Skeleton = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::humanoid()
    }
}
