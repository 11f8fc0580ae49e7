use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::kinematics::JointPositions;
use crate::motion::skeleton::Skeleton;
use crate::scalar::Scalar;

/// Vertical axis of the world frame.
pub const UP: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactThresholds {
    /// Metres per frame.
    pub velocity: f64,
    /// Metres above the lowest foot height in the clip.
    pub height: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self {
            velocity: 0.01,
            height: 0.05,
        }
    }
}

/// Binary labels, `frames x foot_joints`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FootContactLabels {
    pub labels: Vec<u8>,
    pub frames: usize,
    pub foot_joints: Vec<usize>,
}

impl FootContactLabels {
    pub fn get(&self, frame: usize, foot: usize) -> bool {
        self.labels[frame * self.foot_joints.len() + foot] == 1
    }

    pub fn feet(&self) -> usize {
        self.foot_joints.len()
    }
}

/// A foot is in contact when it moves slower than `velocity` and sits less than
/// `height` above the lowest foot sample of the clip. The final frame copies
/// the previous label.
pub fn detect_foot_contacts<T: Scalar>(
    pos: &JointPositions<T>,
    skel: &Skeleton,
    th: ContactThresholds,
) -> Result<FootContactLabels> {
    let n = pos.len();
    if n < 2 {
        return Err(Error::SequenceTooShort { need: 2, got: n });
    }
    let feet = &skel.foot_joints;
    let floor = (0..n)
        .flat_map(|i| feet.iter().map(move |&f| (i, f)))
        .map(|(i, f)| pos.get(i, f)[UP].as_f64())
        .fold(f64::INFINITY, f64::min);
    let mut labels = vec![0u8; n * feet.len()];
    for i in 0..n - 1 {
        for (k, &f) in feet.iter().enumerate() {
            let a = pos.get(i, f);
            let b = pos.get(i + 1, f);
            let speed = (0..3)
                .map(|c| (b[c] - a[c]).as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            let height = a[UP].as_f64() - floor;
            labels[i * feet.len() + k] = u8::from(speed < th.velocity && height < th.height);
        }
    }
    let w = feet.len();
    let (head, tail) = labels.split_at_mut((n - 1) * w);
    tail.copy_from_slice(&head[(n - 2) * w..]);
    Ok(FootContactLabels {
        labels,
        frames: n,
        foot_joints: feet.clone(),
    })
}
