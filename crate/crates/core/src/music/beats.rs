//! Onset-envelope beat picking.

use super::{BeatTimes, MusicFeatureSequence};
use crate::scalar::Scalar;

/// Peaks below this fraction of the strongest onset are ignored.
pub const RELATIVE_THRESHOLD: f64 = 0.3;
pub const MIN_GAP_FRAMES: usize = 10;

/// Half-wave rectified first difference of the per-frame L2 magnitude. The
/// first frame is measured against the clip's quietest frame so a beat on
/// frame 0 is still an onset.
pub fn onset_envelope<T: Scalar>(m: &MusicFeatureSequence<T>) -> Vec<f64> {
    let mag: Vec<f64> = (0..m.len())
        .map(|i| m.frame(i).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
        .collect();
    if mag.is_empty() {
        return Vec::new();
    }
    let floor = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let mut env = Vec::with_capacity(mag.len());
    env.push(mag[0] - floor);
    for w in mag.windows(2) {
        env.push((w[1] - w[0]).max(0.0));
    }
    env
}

/// Picks local maxima of a 1-D envelope, strongest first, that exceed
/// `rel * max` and keep at least `gap` frames from every kept peak.
pub fn pick_peaks(env: &[f64], rel: f64, gap: usize) -> Vec<usize> {
    let max = env.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let n = env.len();
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = env[i];
            v >= rel * max && v > 0.0 && (i == 0 || v > env[i - 1]) && (i + 1 == n || v >= env[i + 1])
        })
        .collect();
    cand.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| c.abs_diff(k) >= gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn extract_beats<T: Scalar>(m: &MusicFeatureSequence<T>) -> BeatTimes {
    let env = onset_envelope(m);
    BeatTimes::from_frames(&pick_peaks(&env, RELATIVE_THRESHOLD, MIN_GAP_FRAMES), m.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn impulses(n: usize, at: &[usize]) -> MusicFeatureSequence<f64> {
        let mut t = Tensor::zeros(&[n, 4]);
        for &f in at {
            t.row_mut(f)[0] = 1.0;
        }
        MusicFeatureSequence::new(t).unwrap()
    }

    #[test]
    fn silence_has_no_beats() {
        let m = MusicFeatureSequence::new(Tensor::<f64>::zeros(&[100, 8])).unwrap();
        assert!(extract_beats(&m).is_empty());
    }

    #[test]
    fn single_impulse_at_half_a_second() {
        assert_eq!(extract_beats(&impulses(90, &[30])).times(), &[0.5]);
    }

    #[test]
    fn peaks_closer_than_the_gap_keep_the_stronger() {
        let env = [0.0, 1.0, 0.0, 0.0, 2.0, 0.0];
        assert_eq!(pick_peaks(&env, 0.3, 10), vec![4]);
    }
}
