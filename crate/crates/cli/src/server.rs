//! HTTP API over an output root.
//!
//! | method | path                         | body                                  |
//! |--------|------------------------------|---------------------------------------|
//! | GET    | `/runs`                      | run summaries, oldest first           |
//! | POST   | `/runs`                      | `config.yml` text; 202 + run id       |
//! | GET    | `/runs/{id}`                 | manifest, or job state while pending  |
//! | GET    | `/runs/{id}/events`          | server-sent status events             |
//! | GET    | `/runs/{id}/artifacts/{name}`| raw artifact                          |
//! | GET    | `/runs/{id}/ear`             | EAR report                            |
//! | GET    | `/runs/{id}/diff`            | unified diff with per-hunk evidence   |
//! | POST   | `/runs/{id}/reprofile`       | optional `{"post_dir": ...}`          |
//! | GET    | `/corpus`                    | corpus records in index order         |

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;
use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use optimas_core::config::{ConfigError, PipelineConfig};
use optimas_core::corpus::Corpus;
use optimas_core::harness::{RunManifest, MANIFEST_FILE};
use optimas_core::pipeline::{find_run, list_runs, reprofile, run_diff, run_pipeline, PipelineError, RunOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::StreamExt;
use uuid::Uuid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_uuid: Uuid,
    /// RFC 3339.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app: Option<String>,
    /// `queued`, `running`, `failed`, or a run status.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunSummary {
    fn of(m: &RunManifest) -> Self {
        RunSummary {
            run_uuid: m.run_uuid,
            created_at: Some(m.created_at.to_rfc3339()),
            app: Some(m.app.clone()),
            status: m.status.as_str().to_string(),
            improvement_percent: m.improvement_percent,
            error: m.error.clone(),
        }
    }

    fn job(id: Uuid, app: &str, status: &str) -> Self {
        RunSummary {
            run_uuid: id,
            created_at: None,
            app: Some(app.to_string()),
            status: status.to_string(),
            improvement_percent: None,
            error: None,
        }
    }

    /// Pending states are the only non-terminal ones.
    pub fn is_terminal(&self) -> bool {
        !matches!(self.status.as_str(), "queued" | "running")
    }
}

pub struct ApiState {
    root: PathBuf,
    base_dir: PathBuf,
    jobs: Mutex<BTreeMap<Uuid, watch::Sender<RunSummary>>>,
    /// One runtime-measuring job at a time.
    host_lock: Arc<Mutex<()>>,
}

impl ApiState {
    /// `base_dir` resolves relative paths in submitted configs.
    pub fn new(root: impl Into<PathBuf>, base_dir: impl Into<PathBuf>) -> Self {
        ApiState {
            root: root.into(),
            base_dir: base_dir.into(),
            jobs: Mutex::new(BTreeMap::new()),
            host_lock: Arc::new(Mutex::new(())),
        }
    }

    fn job(&self, id: Uuid) -> Option<RunSummary> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(&id).map(|tx| tx.borrow().clone())
    }
}

type Shared = Arc<ApiState>;

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/runs", get(list).post(submit))
        .route("/runs/{id}", get(show))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/artifacts/{*name}", get(artifact))
        .route("/runs/{id}/ear", get(ear))
        .route("/runs/{id}/diff", get(diff))
        .route("/runs/{id}/reprofile", post(reprofile_run))
        .route("/corpus", get(corpus))
        .with_state(Arc::new(state))
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr),
        _ => ServeError::Bind { addr, source: e },
    })
}

pub async fn serve(listener: TcpListener, state: ApiState) -> Result<(), ServeError> {
    fs::create_dir_all(&state.root)?;
    log::info!("serving {} on {}", state.root.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn not_found(what: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, json!({ "error": format!("{what} not found") }))
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string(), "stage": e.stage.to_string() }))
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let key = match &e {
            ConfigError::SchemaViolation { key, .. } => Some(key.clone()),
            _ => None,
        };
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string(), "key": key }))
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() }))
}

fn run_path(s: &ApiState, id: &str) -> Result<PathBuf, ApiError> {
    let uuid = Uuid::parse_str(id).map_err(|_| not_found(format_args!("run {id}")))?;
    find_run(&s.root, &uuid.to_string())
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .ok_or_else(|| not_found(format_args!("run {id}")))
}

async fn list(State(s): State<Shared>) -> Json<Vec<RunSummary>> {
    let pending: Vec<RunSummary> = {
        let jobs = s.jobs.lock().unwrap_or_else(|e| e.into_inner());
        jobs.values().map(|tx| tx.borrow().clone()).collect()
    };
    let root = s.root.clone();
    let manifests = tokio::task::spawn_blocking(move || list_runs(&root)).await.unwrap_or_default();
    let live: BTreeSet<Uuid> = pending.iter().filter(|j| !j.is_terminal()).map(|j| j.run_uuid).collect();
    let on_disk: BTreeSet<Uuid> = manifests.iter().map(|m| m.run_uuid).collect();
    let mut out: Vec<RunSummary> =
        manifests.iter().filter(|m| !live.contains(&m.run_uuid)).map(RunSummary::of).collect();
    // pending jobs, and failures that never got a run directory
    out.extend(pending.into_iter().filter(|j| live.contains(&j.run_uuid) || !on_disk.contains(&j.run_uuid)));
    Json(out)
}

async fn submit(State(s): State<Shared>, body: String) -> Result<Response, ApiError> {
    let mut cfg = PipelineConfig::from_yaml_str(&body, &s.base_dir)?;
    cfg.output_root = s.root.clone();
    let id = Uuid::new_v4();
    let queued = RunSummary::job(id, &cfg.app.name, "queued");
    let (tx, _) = watch::channel(queued.clone());
    s.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(id, tx.clone());

    let lock = s.host_lock.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        tx.send_modify(|j| j.status = "running".into());
        let opts = RunOptions { uuid: Some(id), ..Default::default() };
        let done = match run_pipeline(&cfg, &opts) {
            Ok(out) => RunSummary::of(&out.manifest),
            Err(e) => {
                log::warn!("run {id}: {e}");
                match e.run_dir.as_deref().and_then(|d| RunManifest::load_unverified(d).ok()) {
                    Some(m) => RunSummary::of(&m),
                    None => RunSummary { error: Some(e.to_string()), ..RunSummary::job(id, &cfg.app.name, "failed") },
                }
            }
        };
        tx.send_replace(done);
    });
    let location = format!("/runs/{id}");
    Ok((StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(queued)).into_response())
}

async fn show(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let uuid = Uuid::parse_str(&id).map_err(|_| not_found(format_args!("run {id}")))?;
    let job = s.job(uuid);
    if let Some(j) = job.as_ref().filter(|j| !j.is_terminal()) {
        return Ok(Json(serde_json::to_value(j).expect("serializable")));
    }
    match run_path(&s, &id) {
        Ok(dir) => {
            let m = RunManifest::load_unverified(&dir).map_err(internal)?;
            Ok(Json(serde_json::to_value(m).expect("serializable")))
        }
        Err(e) => job.map(|j| Json(serde_json::to_value(j).expect("serializable"))).ok_or(e),
    }
}

async fn events(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl tokio_stream::Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let uuid = Uuid::parse_str(&id).map_err(|_| not_found(format_args!("run {id}")))?;
    let rx = s.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(&uuid).map(|tx| tx.subscribe());
    let (out, stream) = mpsc::channel::<RunSummary>(8);
    match rx {
        Some(mut rx) => {
            tokio::spawn(async move {
                loop {
                    let cur = rx.borrow_and_update().clone();
                    let terminal = cur.is_terminal();
                    if out.send(cur).await.is_err() || terminal || rx.changed().await.is_err() {
                        break;
                    }
                }
            });
        }
        None => {
            let m = RunManifest::load_unverified(&run_path(&s, &id)?).map_err(internal)?;
            let _ = out.try_send(RunSummary::of(&m));
        }
    }
    let stream = ReceiverStream::new(stream)
        .map(|j| Ok(Event::default().event("status").json_data(j).expect("serializable")));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn content_type(name: &str) -> &'static str {
    if name.ends_with(".json") {
        "application/json"
    } else {
        "text/plain; charset=utf-8"
    }
}

async fn artifact(State(s): State<Shared>, Path((id, name)): Path<(String, String)>) -> Result<Response, ApiError> {
    let dir = run_path(&s, &id)?;
    let m = RunManifest::load_unverified(&dir).map_err(internal)?;
    // Only recorded artifacts are served, which also rules out `..` paths.
    if name != MANIFEST_FILE && !m.digests.contains_key(&name) {
        return Err(not_found(format_args!("artifact {name}")));
    }
    let bytes = fs::read(dir.join(&name)).map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, content_type(&name))], bytes).into_response())
}

async fn ear(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let dir = run_path(&s, &id)?;
    let text = fs::read_to_string(dir.join("ear_report.json")).map_err(|_| not_found("EAR report"))?;
    let v: Value = serde_json::from_str(&text).map_err(internal)?;
    if v.is_null() {
        return Err(not_found("EAR report"));
    }
    Ok(Json(v))
}

async fn diff(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let dir = run_path(&s, &id)?;
    let d = run_diff(&dir)?;
    Ok(Json(serde_json::to_value(d).expect("serializable")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReprofileBody {
    #[serde(default)]
    post_dir: Option<PathBuf>,
}

async fn reprofile_run(State(s): State<Shared>, Path(id): Path<String>, body: String) -> Result<Json<Value>, ApiError> {
    let dir = run_path(&s, &id)?;
    let req: ReprofileBody = if body.trim().is_empty() {
        ReprofileBody::default()
    } else {
        serde_json::from_str(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })))?
    };
    let post = req.post_dir.map(|p| if p.is_absolute() { p } else { s.base_dir.join(p) });
    let lock = s.host_lock.clone();
    let report = tokio::task::spawn_blocking(move || {
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        reprofile(&dir, post.as_deref())
    })
    .await
    .map_err(internal)??;
    Ok(Json(serde_json::to_value(report).expect("serializable")))
}

async fn corpus(State(s): State<Shared>) -> Result<Json<Value>, ApiError> {
    let c = Corpus::new(&s.root);
    if !c.dir().exists() {
        return Ok(Json(json!([])));
    }
    let records = c
        .entries()
        .map_err(internal)?
        .iter()
        .map(|e| c.record(e))
        .collect::<Result<Vec<_>, _>>()
        .map_err(internal)?;
    Ok(Json(serde_json::to_value(records).expect("serializable")))
}
