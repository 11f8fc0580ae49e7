//! Desk-scale synthetic dance corpus.
//!
//! Each clip visits a random sequence of pose clusters, one cluster per click
//! beat. Between beats the joint angles ease from one target to the next with
//! a cosine profile, so joint speed vanishes on the beat frames. The root bobs
//! on alternate beats and the feet touch the floor on every beat.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, MotionClip, Split};
use crate::error::{Error, Result};
use crate::motion::contacts::UP;
use crate::motion::kinematics::forward_kinematics;
use crate::motion::rotation::{matrix_to_rot6d, rotation_vector, IDENTITY_6D};
use crate::motion::skeleton::joints;
use crate::motion::{MotionSequence, Skeleton, DEFAULT_FPS, JOINT_COUNT, MOTION_DIM};
use crate::music::synth::{beat_frame, synth_click_features};
use crate::tensor::Tensor;

/// Joints that move, with the half-range of each rotation-vector component (rad).
pub const ARTICULATED: [(usize, f64); 13] = [
    (joints::SPINE1, 0.25),
    (joints::SPINE3, 0.25),
    (joints::NECK, 0.3),
    (13, 0.2),
    (14, 0.2),
    (joints::L_SHOULDER, 1.0),
    (joints::R_SHOULDER, 1.0),
    (joints::L_ELBOW, 1.0),
    (joints::R_ELBOW, 1.0),
    (joints::L_HIP, 0.5),
    (joints::R_HIP, 0.5),
    (joints::L_KNEE, 0.6),
    (joints::R_KNEE, 0.6),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames_per_clip: usize,
    pub pose_clusters: usize,
    pub tempo_set: Vec<f64>,
    pub music_dim: usize,
    /// Per-component std of a beat target around its cluster centroid (rad).
    pub pose_noise: f64,
    /// Peak root bob per beat (m).
    pub bob_height: f64,
    /// Root wander around the origin (m).
    pub root_range: f64,
    /// Every n-th clip goes to the test split.
    pub test_every: usize,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clips: 32,
            frames_per_clip: 1024,
            pose_clusters: 8,
            tempo_set: vec![90.0, 120.0, 150.0],
            music_dim: crate::music::DEFAULT_MUSIC_DIM,
            pose_noise: 0.02,
            bob_height: 0.03,
            root_range: 0.15,
            test_every: 5,
        }
    }
}

/// Cluster centroids in the flattened rotation-vector space of [`ARTICULATED`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoseClusters {
    pub centroids: Vec<Vec<f64>>,
    pub noise_std: f64,
}

impl PoseClusters {
    pub fn dim(&self) -> usize {
        ARTICULATED.len() * 3
    }

    /// Expected norm of a noise vector.
    pub fn noise_scale(&self) -> f64 {
        self.noise_std * (self.dim() as f64).sqrt()
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.centroids.iter().enumerate() {
            for b in &self.centroids[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

/// Separation required between any two centroids, in units of the noise scale.
pub const MIN_SEPARATION_RATIO: f64 = 5.0;

pub fn pose_clusters(seed: u64, count: usize, noise_std: f64) -> PoseClusters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let dim = ARTICULATED.len() * 3;
    let scale = noise_std * (dim as f64).sqrt();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(count);
    while centroids.len() < count {
        let c: Vec<f64> = ARTICULATED
            .iter()
            .flat_map(|&(_, amp)| [amp, amp, amp])
            .map(|amp| rng.random_range(-amp..=amp))
            .collect();
        let far = centroids
            .iter()
            .all(|o| o.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() >= MIN_SEPARATION_RATIO * scale);
        if far {
            centroids.push(c);
        }
    }
    PoseClusters { centroids, noise_std }
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1))
}

struct Target {
    angles: Vec<f64>,
    root: [f64; 3],
}

/// Position profile whose speed is `2 sin^2(pi u)`: zero on the beats, one peak between.
fn ease(u: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    u - (tau * u).sin() / tau
}

fn pose_row(angles: &[f64], root: [f64; 3]) -> Vec<f64> {
    let mut row = vec![0f64; MOTION_DIM];
    row[..3].copy_from_slice(&root);
    for j in 0..JOINT_COUNT {
        row[3 + j * 6..9 + j * 6].copy_from_slice(&IDENTITY_6D);
    }
    for (i, &(j, _)) in ARTICULATED.iter().enumerate() {
        let v = [angles[i * 3], angles[i * 3 + 1], angles[i * 3 + 2]];
        let r = matrix_to_rot6d(&rotation_vector(v)).expect("rotation vectors give rotations");
        row[3 + j * 6..9 + j * 6].copy_from_slice(&r);
    }
    row
}

/// Lowest foot height of a pose with zero root translation.
fn lowest_foot(angles: &[f64], skel: &Skeleton) -> f64 {
    let row = pose_row(angles, [0.0; 3]);
    let motion = MotionSequence::new(Tensor::new(&[1, MOTION_DIM], row), DEFAULT_FPS).expect("width is 147");
    let pos = forward_kinematics(&motion, skel);
    skel.foot_joints
        .iter()
        .map(|&j| pos.get(0, j)[UP])
        .fold(f64::INFINITY, f64::min)
}

/// One synthetic clip; returns the motion and the beat frames.
///
/// Every channel, root height included, moves along the same eased path
/// between consecutive beat targets, so the mean joint speed has exactly one
/// peak per beat interval. Feet touch the floor on the beats; the root is
/// lifted by `bob_height` on every other beat.
pub fn synth_motion(
    cfg: &SynthCorpusConfig,
    clusters: &PoseClusters,
    skel: &Skeleton,
    bpm: f64,
    rng: &mut ChaCha8Rng,
) -> (MotionSequence<f32>, Vec<usize>) {
    let n = cfg.frames_per_clip;
    let mut beats = Vec::new();
    let mut k = 0;
    loop {
        let f = beat_frame(k, bpm);
        beats.push(f);
        if f >= n {
            break;
        }
        k += 1;
    }
    let noise = Normal::new(0.0, cfg.pose_noise.max(0.0)).expect("valid normal");
    let mut cluster = rng.random_range(0..clusters.centroids.len());
    let mut targets = Vec::with_capacity(beats.len());
    for k in 0..beats.len() {
        let angles: Vec<f64> = clusters.centroids[cluster]
            .iter()
            .map(|&c| c + noise.sample(rng))
            .collect();
        let bob = if k % 2 == 1 { cfg.bob_height } else { 0.0 };
        let root = [
            rng.random_range(-cfg.root_range..=cfg.root_range),
            bob - lowest_foot(&angles, skel),
            rng.random_range(-cfg.root_range..=cfg.root_range),
        ];
        targets.push(Target { angles, root });
        if clusters.centroids.len() > 1 {
            let step = rng.random_range(1..clusters.centroids.len());
            cluster = (cluster + step) % clusters.centroids.len();
        }
    }

    let mut data = Vec::with_capacity(n * MOTION_DIM);
    let mut seg = 0;
    for f in 0..n {
        while beats[seg + 1] <= f {
            seg += 1;
        }
        let (b0, b1) = (beats[seg], beats[seg + 1]);
        let s = ease((f - b0) as f64 / (b1 - b0) as f64);
        let (a, b) = (&targets[seg], &targets[seg + 1]);
        let lerp = |x: f64, y: f64| x + s * (y - x);
        let angles: Vec<f64> = a.angles.iter().zip(&b.angles).map(|(&x, &y)| lerp(x, y)).collect();
        let root = std::array::from_fn(|c| lerp(a.root[c], b.root[c]));
        data.extend(pose_row(&angles, root));
    }
    beats.pop();
    let motion = MotionSequence::new(Tensor::new(&[n, MOTION_DIM], data), DEFAULT_FPS).expect("width is 147");
    (motion.cast(), beats)
}

/// Pure function of the config: the same seed gives an identical corpus.
pub fn generate_synthetic_corpus(cfg: &SynthCorpusConfig) -> Result<Corpus> {
    if cfg.clips == 0 || cfg.pose_clusters < 2 || cfg.tempo_set.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one clip, two pose clusters and one tempo".into(),
        ));
    }
    let skel = Skeleton::humanoid();
    let clusters = pose_clusters(cfg.seed, cfg.pose_clusters, cfg.pose_noise);
    let mut clips = Vec::with_capacity(cfg.clips);
    for i in 0..cfg.clips {
        let mut rng = clip_rng(cfg.seed, i);
        let bpm = cfg.tempo_set[rng.random_range(0..cfg.tempo_set.len())];
        let (motion, _) = synth_motion(cfg, &clusters, &skel, bpm, &mut rng);
        let duration = cfg.frames_per_clip as f64 / DEFAULT_FPS as f64;
        let (music, beats) = synth_click_features(bpm, duration, cfg.music_dim, rng.random())?;
        let split = if cfg.test_every > 0 && i % cfg.test_every == cfg.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        };
        let clip = MotionClip {
            id: format!("synth_{i:04}"),
            split,
            motion,
            music,
            beats,
            tempo_bpm: Some(bpm),
        };
        clip.validate()?;
        clips.push(clip);
    }
    Ok(Corpus { skeleton: skel, clips })
}
