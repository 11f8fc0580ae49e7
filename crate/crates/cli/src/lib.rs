//! Command-line stages and the HTTP service around the dancemeld models.

pub mod config;
pub mod music_source;
pub mod pipeline;
pub mod service;
pub mod session;

pub use config::Preset;
pub use music_source::MusicSource;
pub use pipeline::{run_smoke, SmokeArtifacts, SmokeConfig};
pub use service::{router, serve, AppState, Models};
pub use session::{SessionMeta, SessionRecord, SessionStore, API_VERSION};
