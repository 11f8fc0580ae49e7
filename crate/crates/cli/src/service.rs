//! JSON-over-HTTP access to generation, sessions and editing.
//!
//! Models are loaded once and shared read-only; inference runs on the
//! blocking pool so requests proceed concurrently.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dancemeld::latent::{apply_edits, EditOp};
use dancemeld::motion::{Skeleton, DEFAULT_FPS};
use dancemeld::{Prior, VqModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;

use crate::music_source::MusicSource;
use crate::pipeline::{self, DEFAULT_SAMPLING_STEPS};
use crate::session::{SessionMeta, SessionRecord, SessionStore, API_VERSION};

/// Most windows one generate request may ask for.
pub const MAX_WINDOWS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub vq: String,
    pub prior: String,
}

pub struct Models {
    pub vq: VqModel,
    pub prior: Prior,
    pub versions: ModelVersions,
}

/// `kind:` plus the first 12 hex digits of the file's SHA-256.
fn file_version(kind: &str, path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    Ok(format!("{kind}:{hex}"))
}

impl Models {
    pub fn load(vq: &Path, prior: &Path) -> anyhow::Result<Self> {
        let models = Self {
            vq: pipeline::load_vq(vq)?,
            prior: pipeline::load_prior(prior)?,
            versions: ModelVersions {
                vq: file_version("hvqvae", vq)?,
                prior: file_version("prior", prior)?,
            },
        };
        anyhow::ensure!(
            models.prior.config.input_dim == 3 * models.vq.config.code_dim
                && models.prior.config.cond_dim == models.vq.config.music_dim,
            "prior and autoencoder checkpoints do not belong together"
        );
        Ok(models)
    }
}

pub struct AppState {
    pub models: Option<Arc<Models>>,
    pub store: SessionStore,
    /// Feature files addressable by id as `<id>.dmft`.
    pub music_dir: PathBuf,
    pub skeleton: Skeleton,
}

impl AppState {
    pub fn new(models: Option<Models>, data_dir: &Path) -> anyhow::Result<Self> {
        let music_dir = data_dir.join("music");
        std::fs::create_dir_all(&music_dir).with_context(|| format!("creating {}", music_dir.display()))?;
        Ok(Self {
            models: models.map(Arc::new),
            store: SessionStore::open(data_dir)?,
            music_dir,
            skeleton: Skeleton::humanoid(),
        })
    }

    fn models(&self) -> Result<Arc<Models>, ApiError> {
        self.models.clone().ok_or(ApiError::ModelsNotLoaded)
    }
}

#[derive(Debug)]
pub enum ApiError {
    /// 400; `kind` names the violated precondition.
    BadRequest { kind: String, message: String },
    NotFound { kind: String, message: String },
    ModelsNotLoaded,
    Internal(anyhow::Error),
}

impl ApiError {
    fn bad(kind: &str, message: impl Into<String>) -> Self {
        Self::BadRequest {
            kind: kind.into(),
            message: message.into(),
        }
    }

    fn not_found(kind: &str, message: impl Into<String>) -> Self {
        Self::NotFound {
            kind: kind.into(),
            message: message.into(),
        }
    }
}

impl From<dancemeld::Error> for ApiError {
    fn from(e: dancemeld::Error) -> Self {
        use dancemeld::Error as E;
        match e {
            E::Io { .. } | E::Format(_) | E::DivergenceDetected { .. } => Self::Internal(e.into()),
            e => Self::bad(e.kind(), e.to_string()),
        }
    }
}

/// Core errors inside an `anyhow` chain keep their mapping.
impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<dancemeld::Error>() {
            Ok(core) => core.into(),
            Err(e) => Self::Internal(e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad("MalformedRequest", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            Self::BadRequest { kind, message } => (
                StatusCode::BAD_REQUEST,
                json!({"v": API_VERSION, "error": kind, "message": message}),
            ),
            Self::NotFound { kind, message } => (
                StatusCode::NOT_FOUND,
                json!({"v": API_VERSION, "error": kind, "message": message}),
            ),
            Self::ModelsNotLoaded => (
                StatusCode::CONFLICT,
                json!({"v": API_VERSION, "error": "ModelsNotLoaded", "message": "no model checkpoints are loaded"}),
            ),
            Self::Internal(e) => {
                let id = uuid::Uuid::new_v4().to_string();
                log::error!("request failed [{id}]: {e:#}");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    json!({"v": API_VERSION, "error": "Internal", "id": id}),
                )
            }
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn check_version(v: Option<u32>) -> ApiResult<()> {
    match v {
        None | Some(API_VERSION) => Ok(()),
        Some(other) => Err(ApiError::bad(
            "UnsupportedVersion",
            format!("request version {other}, server speaks {API_VERSION}"),
        )),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(anyhow::anyhow!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
pub struct GenerateRequest {
    #[serde(default)]
    pub v: Option<u32>,
    /// `click:BPM` or the id of a feature file in the music directory.
    pub music: String,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Windows to generate; a feature file defaults to all of its whole windows.
    #[serde(default)]
    pub windows: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    #[serde(default)]
    pub v: Option<u32>,
    pub ops: Vec<EditOp>,
}

fn is_plain_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn resolve_music(state: &AppState, music: &str) -> ApiResult<MusicSource> {
    if music.starts_with("click:") {
        return Ok(music.parse::<MusicSource>()?);
    }
    let path = state.music_dir.join(format!("{music}.dmft"));
    if !is_plain_id(music) || !path.is_file() {
        return Err(ApiError::not_found("UnknownMusic", format!("no music with id {music:?}")));
    }
    Ok(MusicSource::File(path))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let (status, versions) = match &state.models {
        Some(m) => ("ok", Some(m.versions.clone())),
        None => ("models_not_loaded", None),
    };
    Json(json!({"v": API_VERSION, "status": status, "model_versions": versions}))
}

async fn codebooks(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let models = state.models()?;
    let st = state.clone();
    blocking(move || {
        let sizes = models.vq.codebook_sizes();
        let (mut top, mut bottom) = (vec![0usize; sizes.top], vec![0usize; sizes.bottom]);
        let sessions = st.store.all()?;
        for s in &sessions {
            s.codes.top.iter().filter(|&&c| c < sizes.top).for_each(|&c| top[c] += 1);
            s.codes.bottom.iter().filter(|&&c| c < sizes.bottom).for_each(|&c| bottom[c] += 1);
        }
        Ok(Json(json!({
            "v": API_VERSION,
            "code_dim": models.vq.config.code_dim,
            "sessions": sessions.len(),
            "top": {"size": sizes.top, "usage": top},
            "bottom": {"size": sizes.bottom, "usage": bottom},
        })))
    })
    .await
}

async fn generate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionRecord>)> {
    let Json(req) = body?;
    check_version(req.v)?;
    let models = state.models()?;
    let source = resolve_music(&state, &req.music)?;
    let windows = req.windows.unwrap_or(0);
    if windows > MAX_WINDOWS {
        return Err(ApiError::bad(
            "InvalidArgument",
            format!("at most {MAX_WINDOWS} windows per request, got {windows}"),
        ));
    }
    let steps = req.steps.unwrap_or(DEFAULT_SAMPLING_STEPS);
    let seed = req.seed.unwrap_or(0);
    let st = state.clone();
    let record = blocking(move || {
        let g = pipeline::generate(&models.vq, &models.prior, &source, windows, steps, seed)?;
        let mut meta = SessionMeta::new(g.music.id, g.codes, g.music.beats.times().to_vec());
        meta.steps = Some(steps);
        meta.seed = Some(seed);
        st.store.insert(&meta, &g.motion)?;
        Ok(SessionRecord::new(meta, &g.motion, &st.skeleton))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionRecord>> {
    let st = state.clone();
    blocking(move || match st.store.get(&id)? {
        Some((meta, motion)) => Ok(Json(SessionRecord::new(meta, &motion, &st.skeleton))),
        None => Err(ApiError::not_found("UnknownSession", format!("no session {id}"))),
    })
    .await
}

async fn get_motion(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let st = state.clone();
    blocking(move || match st.store.motion_bytes(&id)? {
        Some(bytes) => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()),
        None => Err(ApiError::not_found("UnknownSession", format!("no session {id}"))),
    })
    .await
}

async fn edit_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionRecord>)> {
    let parent_missing = || ApiError::not_found("UnknownSession", format!("no session {id}"));
    let st = state.clone();
    let pid = id.clone();
    let parent = blocking(move || Ok(st.store.get(&pid)?.map(|p| p.0))).await?.ok_or_else(parent_missing)?;
    let Json(req) = body?;
    check_version(req.v)?;
    let models = state.models()?;
    let st = state.clone();
    let record = blocking(move || {
        let (codes, motion) = apply_edits(&parent.codes, &req.ops, &models.vq)?;
        let duration = motion.len() as f64 / DEFAULT_FPS as f64;
        let child = parent.child(codes, req.ops, duration);
        st.store.insert(&child, &motion)?;
        Ok(SessionRecord::new(child, &motion, &st.skeleton))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("UnknownRoute", "no such endpoint")
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/codebooks", get(codebooks))
        .route("/api/generate", post(generate))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/motion", get(get_motion))
        .route("/api/session/{id}/edit", post(edit_session))
        .route("/api/{*rest}", axum::routing::any(unknown_route))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: TcpListener, app: Router) -> anyhow::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
