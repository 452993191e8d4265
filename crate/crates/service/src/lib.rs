//! HTTP job API over the makeup pipeline.
//!
//! Uploads are stored in a content-addressed artifact store. Style learning
//! and generation run as queued jobs on a fixed pool of workers; clients
//! poll `GET /jobs/{id}`.

pub mod api;
pub mod engine;
pub mod error;
pub mod jobs;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;

use tokio::sync::{mpsc, Mutex};

use crate::engine::{Engine, GenerateRequest, StyleRequest};
use crate::jobs::{JobBoard, JobKind};
use crate::store::ArtifactStore;

pub use api::router;

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_REFERENCES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub addr: String,
    pub store_dir: PathBuf,
    pub workers: usize,
    pub backend_seed: u64,
    pub max_upload_bytes: usize,
    pub branch_path: Option<PathBuf>,
    pub style_preset: String,
    pub image_size: usize,
}

impl ServiceConfig {
    pub fn with_store(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            store_dir: store_dir.into(),
            workers: 1,
            backend_seed: 0,
            max_upload_bytes: 8 << 20,
            branch_path: None,
            style_preset: "toy".into(),
            image_size: 64,
        }
    }

    /// Reads `MAKEUP_*` environment variables over the defaults.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        fn parse<T: std::str::FromStr>(key: &str, v: Option<String>) -> Result<Option<T>, String> {
            v.map(|s| s.parse::<T>().map_err(|_| format!("{key}: cannot parse `{s}`")))
                .transpose()
        }
        let mut c = Self::with_store(get("MAKEUP_STORE_DIR").unwrap_or_else(|| "store".into()));
        if let Some(a) = get("MAKEUP_ADDR") {
            c.addr = a;
        }
        match get("MAKEUP_BACKEND").as_deref() {
            None | Some("toy") => {}
            Some("external-weights") => {
                return Err("MAKEUP_BACKEND=external-weights needs pretrained adapter weights, which are not bundled".into())
            }
            Some(other) => return Err(format!("MAKEUP_BACKEND: unknown backend `{other}`")),
        }
        if let Some(v) = parse("MAKEUP_WORKERS", get("MAKEUP_WORKERS"))? {
            c.workers = v;
        }
        if let Some(v) = parse("MAKEUP_BACKEND_SEED", get("MAKEUP_BACKEND_SEED"))? {
            c.backend_seed = v;
        }
        if let Some(v) = parse("MAKEUP_MAX_UPLOAD_BYTES", get("MAKEUP_MAX_UPLOAD_BYTES"))? {
            c.max_upload_bytes = v;
        }
        if let Some(v) = parse("MAKEUP_IMAGE_SIZE", get("MAKEUP_IMAGE_SIZE"))? {
            c.image_size = v;
        }
        c.branch_path = get("MAKEUP_BRANCH").map(PathBuf::from);
        if let Some(p) = get("MAKEUP_STYLE_PRESET") {
            c.style_preset = p;
        }
        if c.workers == 0 {
            return Err("MAKEUP_WORKERS must be at least 1".into());
        }
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Work {
    LearnStyle(StyleRequest),
    Generate(GenerateRequest),
}

pub(crate) struct Queued {
    id: String,
    work: Work,
}

pub struct Inner {
    pub config: ServiceConfig,
    pub store: ArtifactStore,
    pub jobs: JobBoard,
    pub engine: Engine,
    queue: mpsc::UnboundedSender<Queued>,
}

/// Shared state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;
    fn deref(&self) -> &Inner {
        &self.0
    }
}

impl AppState {
    /// Opens the store and spawns the workers. Must be
    /// called inside a Tokio runtime.
    pub fn start(config: ServiceConfig) -> Result<Self, String> {
        let store = ArtifactStore::open(&config.store_dir).map_err(|e| e.to_string())?;
        let engine = Engine::new(&config)?;
        let (tx, rx) = mpsc::unbounded_channel();
        let state = Self(Arc::new(Inner {
            store,
            jobs: JobBoard::default(),
            engine,
            queue: tx,
            config,
        }));
        let rx = Arc::new(Mutex::new(rx));
        for _ in 0..state.config.workers {
            tokio::spawn(worker(state.clone(), rx.clone()));
        }
        Ok(state)
    }

    pub(crate) fn enqueue(&self, kind: JobKind, params: serde_json::Value, work: Work) -> jobs::Job {
        let job = self.jobs.create(kind, params);
        if self.queue.send(Queued { id: job.id.clone(), work }).is_err() {
            self.jobs.start(&job.id);
            self.jobs.fail(&job.id, "job queue is closed".into());
        }
        job
    }
}

async fn worker(state: AppState, rx: Arc<Mutex<mpsc::UnboundedReceiver<Queued>>>) {
    loop {
        let next = rx.lock().await.recv().await;
        let Some(q) = next else { break };
        if !state.jobs.start(&q.id) {
            continue;
        }
        let st = state.clone();
        let id = q.id.clone();
        let outcome = tokio::task::spawn_blocking(move || match &q.work {
            Work::LearnStyle(r) => st.engine.learn_style(&st.store, &q.id, r),
            Work::Generate(r) => st.engine.generate(&st.store, r),
        })
        .await;
        match outcome {
            Ok(Ok((refs, result))) => {
                state.jobs.succeed(&id, refs, result);
            }
            Ok(Err(msg)) => {
                log::warn!("{id} failed: {msg}");
                state.jobs.fail(&id, msg);
            }
            Err(e) => {
                state.jobs.fail(&id, format!("job aborted: {e}"));
            }
        }
    }
}
