//! HTTP API used by the annotation client.
//!
//! Routes live under `/api` and honour an `Accept-Version` header (only
//! version 1 exists). When an auth token is configured, `/api` routes require
//! `Authorization: Bearer <token>`.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sqkit::export::{render_scene_png, template_geometry, PartGeometry, RenderMode};
use sqkit::io::{atomic_write, load_scene, parse_pose, parse_record, verify_record, FileLock, Scene, TemplateLibrary};
use sqkit::kinematics::ScenePose;
use sqkit::Error;

pub const API_VERSION: &str = "1";
pub const DEFAULT_GEOMETRY_RESOLUTION: usize = 24;
const MAX_GEOMETRY_RESOLUTION: usize = 128;

fn default_cache_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bind: String,
    pub scene_root: PathBuf,
    pub template_dir: PathBuf,
    /// Rendered PNGs kept in memory.
    #[serde(default = "default_cache_size")]
    pub cache_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, dir) in [("scene_root", &self.scene_root), ("template_dir", &self.template_dir)] {
            if std::fs::read_dir(dir).is_err() {
                return Err(ConfigError::Invalid(format!("{name} {} is not a readable directory", dir.display())));
            }
        }
        if self.cache_size == 0 {
            return Err(ConfigError::Invalid("cache_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::LockHeld(_) => StatusCode::CONFLICT,
            Error::ReplayMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } | Error::Image(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

type CacheKey = (String, RenderMode, String);

struct AppState {
    config: ServiceConfig,
    library: TemplateLibrary,
    cache: Mutex<LruCache<CacheKey, Arc<Vec<u8>>>>,
}

impl AppState {
    fn scene_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        let valid = !id.is_empty()
            && !id.starts_with('.')
            && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        let path = self.config.scene_root.join(format!("{id}.json"));
        if valid && path.is_file() {
            Ok(path)
        } else {
            Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))
        }
    }

    fn scene(&self, id: &str) -> Result<Scene, ApiError> {
        let scene = load_scene(&self.scene_path(id)?)?;
        if scene.id != id {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")));
        }
        Ok(scene)
    }
}

pub fn router(config: ServiceConfig) -> Result<Router, ConfigError> {
    config.validate()?;
    let capacity = NonZeroUsize::new(config.cache_size).expect("validated");
    let state = Arc::new(AppState {
        library: TemplateLibrary::new(vec![config.template_dir.clone()]),
        cache: Mutex::new(LruCache::new(capacity)),
        config,
    });
    let api = Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scene/{id}", get(get_scene))
        .route("/scene/{id}/render", get(render))
        .route("/scene/{id}/annotation", post(post_annotation))
        .layer(middleware::from_fn_with_state(state.clone(), gate));
    Ok(Router::new()
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .nest("/api", api)
        .with_state(state))
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let bind = config.bind.clone();
    let app = router(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

async fn gate(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(v) = request.headers().get("accept-version") {
        if v.to_str().map(str::trim).ok() != Some(API_VERSION) {
            return ApiError::new(StatusCode::NOT_ACCEPTABLE, format!("unsupported API version {v:?}")).into_response();
        }
    }
    if let Some(token) = &state.config.auth_token {
        let ok = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            == Some(token.as_str());
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    let mut response = next.run(request).await;
    response.headers_mut().insert("api-version", HeaderValue::from_static(API_VERSION));
    response
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub category: String,
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SceneSummary>>, ApiError> {
    let root = state.config.scene_root.clone();
    let mut out = Vec::new();
    let entries = std::fs::read_dir(&root).map_err(|e| ApiError::from(Error::io(&root, e)))?;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().is_none_or(|e| e != "json") || !path.is_file() {
            continue;
        }
        match load_scene(&path) {
            Ok(s) if path.file_stem().is_some_and(|f| *f == *s.id) => out.push(SceneSummary {
                id: s.id,
                category: s.object.category,
            }),
            Ok(_) => log::warn!("{}: file name does not match the scene id", path.display()),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct GeometryQuery {
    resolution: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemplateGeometry {
    pub human: Vec<PartGeometry>,
    pub object: Vec<PartGeometry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneResponse {
    pub scene: Scene,
    pub geometry: TemplateGeometry,
}

async fn get_scene(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<GeometryQuery>,
) -> Result<Json<SceneResponse>, ApiError> {
    let resolution = q.resolution.unwrap_or(DEFAULT_GEOMETRY_RESOLUTION);
    if !(4..=MAX_GEOMETRY_RESOLUTION).contains(&resolution) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("resolution must be in 4..={MAX_GEOMETRY_RESOLUTION}"),
        ));
    }
    let scene = state.scene(&id)?;
    let (human, object) = scene.resolve(&state.library)?;
    Ok(Json(SceneResponse {
        geometry: TemplateGeometry {
            human: template_geometry(&human, resolution)?,
            object: template_geometry(&object, resolution)?,
        },
        scene,
    }))
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    pose: Option<String>,
    mode: Option<String>,
}

/// Decodes the base64 (standard or URL-safe, padding optional) JSON of an
/// object pose.
pub fn decode_pose(encoded: &str) -> Result<ScenePose, String> {
    use base64::engine::general_purpose::{STANDARD, STANDARD_NO_PAD, URL_SAFE, URL_SAFE_NO_PAD};
    let bytes = [STANDARD, STANDARD_NO_PAD, URL_SAFE, URL_SAFE_NO_PAD]
        .iter()
        .find_map(|e| e.decode(encoded).ok())
        .ok_or("pose is not valid base64")?;
    let text = String::from_utf8(bytes).map_err(|_| "pose is not UTF-8 JSON")?;
    let (pose, _) = parse_pose(&text).map_err(|e| format!("pose is not a valid ScenePose: {e}"))?;
    Ok(pose)
}

pub fn encode_pose(pose: &ScenePose) -> String {
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(serde_json::to_vec(pose).expect("poses serialize"))
}

async fn render(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RenderQuery>,
) -> Result<Response, ApiError> {
    let mode: RenderMode = match q.mode.as_deref() {
        None => RenderMode::Mask,
        Some(m @ ("mask" | "overlay")) => m.parse()?,
        Some(m) => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown mode `{m}`"))),
    };
    let scene = state.scene(&id)?;
    let pose = match &q.pose {
        Some(p) => Some(decode_pose(p).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, m))?),
        None => None,
    };
    let key = (
        id.clone(),
        mode,
        serde_json::to_string(&(&scene, &pose)).expect("scenes serialize"),
    );
    if let Some(png) = state.cache.lock().get(&key).cloned() {
        return Ok(png_response(png));
    }
    let worker = state.clone();
    let png = tokio::task::spawn_blocking(move || {
        render_scene_png(&scene, &worker.library, pose.as_ref(), mode, &worker.config.scene_root)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let png = Arc::new(png);
    state.cache.lock().put(key, png.clone());
    Ok(png_response(png))
}

fn png_response(png: Arc<Vec<u8>>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    (headers, png.as_ref().clone()).into_response()
}

/// Where accepted annotation records are stored.
pub fn annotation_path(scene_root: &Path, id: &str) -> PathBuf {
    scene_root.join("annotations").join(format!("{id}.json"))
}

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> Result<Json<serde_json::Value>, ApiError> {
    let scene = state.scene(&id)?;
    let record = parse_record(&body)?;
    if record.scene_id != id {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("record is for scene `{}`, not `{id}`", record.scene_id),
        ));
    }
    let (_, object) = scene.resolve(&state.library)?;
    verify_record(&object, &record).map_err(|e| match e {
        Error::Io { .. } => ApiError::from(e),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
    })?;
    let path = annotation_path(&state.config.scene_root, &id);
    let dir = path.parent().expect("annotation path has a parent").to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| ApiError::from(Error::io(&dir, e)))?;
    let _lock = FileLock::acquire(&path)?;
    let text = serde_json::to_string_pretty(&record).expect("records serialize");
    atomic_write(&path, text.as_bytes())?;
    Ok(Json(json!({ "saved": format!("annotations/{id}.json") })))
}
