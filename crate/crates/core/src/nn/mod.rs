//! Neural network building blocks on top of [`crate::autodiff`].

pub mod layers;
pub mod optim;
pub mod params;

pub use layers::{dropout, Conv1d, LayerNorm, Linear, ResBlock1d};
pub use optim::{Optimizer, OptimizerKind, OptimizerState};
pub use params::{Init, ParamId, ParamStore};
