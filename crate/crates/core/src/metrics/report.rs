use serde::{Deserialize, Serialize};

use super::bas::{beat_alignment, motion_beats, DEFAULT_SIGMA};
use super::diversity::diversity;
use super::frechet::frechet_distance;
use super::geometric::geometric_from_positions;
use super::kinetic::kinetic_from_positions;
use super::pfc::pfc_from_positions;
use crate::error::{Error, Result};
use crate::motion::{forward_kinematics, MotionSequence, Skeleton};
use crate::music::BeatTimes;
use crate::scalar::Scalar;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub v: u32,
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub bas: f64,
    pub pfc: f64,
    pub real_samples: usize,
    pub generated_samples: usize,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("FID_k", self.fid_k),
            ("FID_g", self.fid_g),
            ("Div_k", self.div_k),
            ("Div_g", self.div_g),
            ("BAS", self.bas),
            ("PFC", self.pfc),
        ];
        let mut out = format!(
            "{:<8}{:>14}\n",
            "metric",
            format!("value (n={}/{})", self.real_samples, self.generated_samples)
        );
        for (k, v) in rows {
            out.push_str(&format!("{k:<8}{v:>14.4}\n"));
        }
        out
    }
}

/// Below this spread a reference dimension is only centered, not rescaled.
pub const DEGENERATE_STD: f64 = 1e-3;

/// Per-dimension standardization using the statistics of `reference`.
fn normalize(reference: &[Vec<f64>], sets: [&mut Vec<Vec<f64>>; 2]) {
    let d = reference[0].len();
    let n = reference.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| reference.iter().map(|v| v[k]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|k| {
            let var = reference.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd < DEGENERATE_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    for set in sets {
        for v in set.iter_mut() {
            for k in 0..d {
                v[k] = (v[k] - mean[k]) / std[k];
            }
        }
    }
}

/// A generated motion with the beats of the music that conditioned it.
pub struct GeneratedSample<'a, T> {
    pub motion: &'a MotionSequence<T>,
    pub music_beats: &'a BeatTimes,
}

/// Features of both sets are standardized with the real set's statistics
/// before the Fréchet distances and the generated-set diversity are taken.
pub fn evaluate<T: Scalar>(
    real: &[MotionSequence<T>],
    generated: &[GeneratedSample<'_, T>],
    skel: &Skeleton,
) -> Result<MetricReport> {
    if real.len() < 2 || generated.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: real.len().min(generated.len()),
        });
    }
    let feats = |m: &MotionSequence<T>| {
        let pos = forward_kinematics(m, skel);
        (
            kinetic_from_positions(&pos, m.fps).values,
            geometric_from_positions(&pos).values,
            pos,
        )
    };
    let (mut rk, mut rg) = (Vec::new(), Vec::new());
    for m in real {
        let (k, g, _) = feats(m);
        rk.push(k);
        rg.push(g);
    }
    let (mut gk, mut gg) = (Vec::new(), Vec::new());
    let (mut bas, mut pfc) = (0.0, 0.0);
    for s in generated {
        let (k, g, pos) = feats(s.motion);
        gk.push(k);
        gg.push(g);
        let beats = motion_beats(&pos, s.motion.fps);
        bas += beat_alignment(&beats, s.music_beats, DEFAULT_SIGMA)?;
        pfc += pfc_from_positions(&pos, s.motion.fps);
    }
    let rk_ref = rk.clone();
    normalize(&rk_ref, [&mut rk, &mut gk]);
    let rg_ref = rg.clone();
    normalize(&rg_ref, [&mut rg, &mut gg]);
    let n = generated.len() as f64;
    Ok(MetricReport {
        v: REPORT_VERSION,
        fid_k: frechet_distance(&rk, &gk)?,
        fid_g: frechet_distance(&rg, &gg)?,
        div_k: diversity(&gk)?,
        div_g: diversity(&gg)?,
        bas: bas / n,
        pfc: pfc / n,
        real_samples: real.len(),
        generated_samples: generated.len(),
    })
}
