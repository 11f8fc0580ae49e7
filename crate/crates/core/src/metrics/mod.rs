//! Evaluation battery: feature statistics, Fréchet distance, diversity, beat
//! alignment and foot-contact plausibility.

pub mod bas;
pub mod diversity;
pub mod frechet;
pub mod geometric;
pub mod kinetic;
pub mod pfc;
pub mod report;

use serde::{Deserialize, Serialize};

pub use bas::{beat_alignment, mean_joint_speed, motion_beats, DEFAULT_SIGMA};
pub use diversity::diversity;
pub use frechet::frechet_distance;
pub use geometric::{geometric_features, GEOMETRIC_PREDICATES};
pub use kinetic::kinetic_features;
pub use pfc::pfc;
pub use report::{evaluate, GeneratedSample, MetricReport, DEGENERATE_STD, REPORT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Kinetic,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}
