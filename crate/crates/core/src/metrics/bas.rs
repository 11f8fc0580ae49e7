use crate::error::{Error, Result};
use crate::motion::{JointPositions, JOINT_COUNT};
use crate::music::BeatTimes;
use crate::scalar::Scalar;

pub const DEFAULT_SIGMA: f64 = 0.1;
pub const SPEED_SMOOTHING: usize = 5;

/// Mean joint speed per frame (m/s), central differences inside the clip and
/// one-sided at the ends.
pub fn mean_joint_speed<T: Scalar>(pos: &JointPositions<T>, fps: u32) -> Vec<f64> {
    let n = pos.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let dt = (b - a) as f64 / fps as f64;
            (0..JOINT_COUNT)
                .map(|j| {
                    let (p, q) = (pos.get(a, j), pos.get(b, j));
                    (0..3).map(|c| (q[c] - p[c]).as_f64().powi(2)).sum::<f64>().sqrt() / dt
                })
                .sum::<f64>()
                / JOINT_COUNT as f64
        })
        .collect()
}

/// Centred moving average; the window shrinks at the clip edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Strict local minima of the smoothed mean joint speed.
pub fn motion_beats<T: Scalar>(pos: &JointPositions<T>, fps: u32) -> BeatTimes {
    let s = moving_average(&mean_joint_speed(pos, fps), SPEED_SMOOTHING);
    let frames: Vec<usize> = (1..s.len().saturating_sub(1))
        .filter(|&i| s[i] < s[i - 1] && s[i] < s[i + 1])
        .collect();
    BeatTimes::from_frames(&frames, fps)
}

/// Mean over music beats of `exp(-d^2 / (2 sigma^2))`, `d` the distance to the
/// nearest motion beat. Lies in `[0, 1]`.
pub fn beat_alignment(motion: &BeatTimes, music: &BeatTimes, sigma: f64) -> Result<f64> {
    if music.is_empty() {
        return Err(Error::NoMusicBeats);
    }
    let total: f64 = music
        .times()
        .iter()
        .map(|&t| {
            let d2 = motion
                .times()
                .iter()
                .map(|&b| (t - b).powi(2))
                .fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}
