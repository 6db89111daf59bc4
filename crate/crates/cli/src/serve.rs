//! Local HTTP service receiving labeler traces.
//!
//! `GET /health`, `GET /puzzles` (target silhouettes as 28x28 row strings)
//! and `POST /traces` (a trace document; 201 when stored, 400 with parse
//! diagnostics or itemized violations otherwise).

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tangram_core::bitmap::BinaryImage;
use tangram_core::geometry::{puzzle_solution_state, SolveTrace, Variant, PUZZLE_NAMES};
use tangram_core::nn::INPUT_SIDE;
use tangram_core::trace::TraceDocument;

use crate::commands::check_document;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Puzzle {
    pub name: String,
    pub silhouette: BinaryImage,
}

/// Every named puzzle with its solved board rendered at 28x28.
pub fn puzzles() -> Vec<Puzzle> {
    PUZZLE_NAMES
        .iter()
        .filter_map(|&name| {
            let state = puzzle_solution_state(name)?;
            let trace = SolveTrace {
                puzzle_name: name.into(),
                embedding_key: name.into(),
                variant: Variant::A,
                steps: vec![state],
            };
            let frame = trace.render(INPUT_SIDE).ok()?.pop()?;
            Some(Puzzle { name: name.into(), silhouette: frame })
        })
        .collect()
}

pub struct ServeState {
    dir: PathBuf,
    next: AtomicU64,
    puzzles: Vec<Puzzle>,
}

impl ServeState {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), next: AtomicU64::new(0), puzzles: puzzles() })
    }

    /// Writes to a temporary file, then links it under the first free
    /// sequence number so concurrent uploads never clobber each other.
    fn persist(&self, doc: &TraceDocument) -> std::io::Result<PathBuf> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(doc.to_json().as_bytes())?;
        loop {
            let n = self.next.fetch_add(1, Ordering::Relaxed);
            let path = self.dir.join(format!("{}-{n:06}.json", doc.kind.label()));
            match tmp.persist_noclobber(&path) {
                Ok(_) => return Ok(path),
                Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => tmp = e.file,
                Err(e) => return Err(e.error),
            }
        }
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_puzzles(State(state): State<Arc<ServeState>>) -> Json<Vec<Puzzle>> {
    Json(state.puzzles.clone())
}

async fn post_trace(State(state): State<Arc<ServeState>>, body: String) -> (StatusCode, Json<Value>) {
    let doc = match TraceDocument::from_json(&body) {
        Ok(doc) => doc,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": "parse", "message": e.to_string() }))),
    };
    match check_document(&doc) {
        Ok(report) if report.is_valid() => {}
        Ok(report) => {
            return (StatusCode::BAD_REQUEST, Json(json!({ "error": "validation", "violations": report.violations })))
        }
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({ "error": "parse", "message": e.to_string() }))),
    }
    match state.persist(&doc) {
        Ok(path) => (StatusCode::CREATED, Json(json!({ "path": path, "frames": doc.frames.len() }))),
        Err(e) => {
            log::error!("storing trace failed: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "storage", "message": e.to_string() })))
        }
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/puzzles", get(list_puzzles))
        .route("/traces", post(post_trace))
        .with_state(state)
}

/// Serves on 127.0.0.1 until the process is stopped.
pub fn serve(port: u16, dir: &Path) -> Result<(), CliError> {
    let state = Arc::new(ServeState::new(dir)?);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let io = |source| CliError::Io { path: PathBuf::from(addr.to_string()), source };
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(io)?;
        log::info!("listening on {addr}, storing traces in {}", dir.display());
        axum::serve(listener, router(state)).await.map_err(io)
    })
}
