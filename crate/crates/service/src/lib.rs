//! HTTP/JSON server for Guards and Treasures sessions.
//!
//! Sessions play two practice rounds and then the game rounds. Every choice
//! is appended to the session's play log and synced before it is
//! acknowledged; on startup all sessions are rebuilt by replaying their
//! logs. Outcomes stay hidden until `GET /sessions/{id}/results`.

pub mod api;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use gtl_core::commentary::{
    AffectLexicon, CommentaryError, Commentator, CommentarySchedule, NGramCounts, SentenceStem,
    DEFAULT_Z,
};
use gtl_core::game::{
    GameError, DEFAULT_COVERAGE_BUDGET, DEFAULT_GAME_ROUNDS, DEFAULT_PRACTICE_ROUNDS,
};
use gtl_core::{Condition, RoundSpec};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{Mutex, RwLock};

pub use api::router;
use session::{SessionError, SessionRecord, SessionState};
use store::{Store, StoreError};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "gtl-data";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: line {line}: {message}")]
    Recovery {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Commentary(#[from] CommentaryError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Round counts and coverage budget for new sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSettings {
    pub practice_rounds: usize,
    pub game_rounds: usize,
    pub coverage_budget: f64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            practice_rounds: DEFAULT_PRACTICE_ROUNDS,
            game_rounds: DEFAULT_GAME_ROUNDS,
            coverage_budget: DEFAULT_COVERAGE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Corpus files to train on; the bundled corpus when empty.
    pub corpus: Vec<PathBuf>,
    pub stems: Option<PathBuf>,
    pub afinn: Option<PathBuf>,
    pub sessions: SessionSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            data_dir: DEFAULT_DATA_DIR.into(),
            corpus: Vec::new(),
            stems: None,
            afinn: None,
            sessions: SessionSettings::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `GTL_HOST`, `GTL_PORT`, `GTL_DATA_DIR`, `GTL_CORPUS` (a
    /// path list in the platform's `PATH` syntax), `GTL_STEMS` and
    /// `GTL_AFINN`, falling back to defaults.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_vars(|k| std::env::var_os(k))
    }

    pub fn from_vars(
        get: impl Fn(&str) -> Option<std::ffi::OsString>,
    ) -> Result<Self, ServiceError> {
        let mut config = ServiceConfig::default();
        if let Some(host) = get("GTL_HOST") {
            config.host = host.to_string_lossy().into_owned();
        }
        if let Some(port) = get("GTL_PORT") {
            let port = port.to_string_lossy();
            config.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("GTL_PORT: invalid port {port:?}")))?;
        }
        if let Some(dir) = get("GTL_DATA_DIR") {
            config.data_dir = dir.into();
        }
        if let Some(corpus) = get("GTL_CORPUS") {
            config.corpus = std::env::split_paths(&corpus).collect();
        }
        config.stems = get("GTL_STEMS").map(PathBuf::from);
        config.afinn = get("GTL_AFINN").map(PathBuf::from);
        Ok(config)
    }

    /// Commentary model from the configured files, bundled assets otherwise.
    pub fn commentator(&self) -> Result<Commentator, ServiceError> {
        let counts = if self.corpus.is_empty() {
            NGramCounts::bundled()
        } else {
            NGramCounts::train(&self.corpus)?
        };
        let lexicon = match &self.afinn {
            Some(path) => AffectLexicon::load(path)?,
            None => AffectLexicon::bundled(),
        };
        let stems = match &self.stems {
            Some(path) => SentenceStem::load_list(path)?,
            None => SentenceStem::bundled(),
        };
        Ok(Commentator::new(
            counts,
            lexicon,
            stems,
            DEFAULT_Z,
            CommentarySchedule::default(),
        )?)
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

type SessionMap = HashMap<String, Arc<Mutex<SessionState>>>;

struct Inner {
    store: Store,
    commentator: Commentator,
    settings: SessionSettings,
    sessions: RwLock<SessionMap>,
}

/// Shared server state. Each session sits behind its own lock, so requests
/// for one session are serialized while distinct sessions proceed freely.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the data directory and replays every session found in it.
    pub fn open(
        data_dir: impl Into<PathBuf>,
        commentator: Commentator,
        settings: SessionSettings,
    ) -> Result<Self, ServiceError> {
        let store = Store::open(data_dir)?;
        let mut sessions = SessionMap::new();
        for stored in store.load_all()? {
            let id = stored.record.config.session_id.clone();
            let state = SessionState::replay(stored.record, stored.entries, &commentator)
                .map_err(|e| match e {
                    SessionError::Replay { index, message } => ServiceError::Recovery {
                        path: stored.log_path.clone(),
                        line: stored.lines.get(index).copied().unwrap_or(index + 1),
                        message,
                    },
                    other => ServiceError::Recovery {
                        path: stored.log_path.clone(),
                        line: 0,
                        message: other.to_string(),
                    },
                })?;
            sessions.insert(id, Arc::new(Mutex::new(state)));
        }
        tracing::info!("recovered {} sessions from {}", sessions.len(), store.root().display());
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                commentator,
                settings,
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        AppState::open(&config.data_dir, config.commentator()?, config.sessions.clone())
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn commentator(&self) -> &Commentator {
        &self.inner.commentator
    }

    pub async fn session(&self, id: &str) -> Option<Arc<Mutex<SessionState>>> {
        self.inner.sessions.read().await.get(id).cloned()
    }

    /// Copy of a session's current state.
    pub async fn snapshot(&self, id: &str) -> Option<SessionState> {
        let session = self.session(id).await?;
        let state = session.lock().await;
        Some(state.clone())
    }

    pub async fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().await.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn create_session(
        &self,
        condition: Condition,
        seed: u64,
        rounds: Option<Vec<RoundSpec>>,
        parent_session_id: Option<String>,
    ) -> Result<SessionState, ServiceError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let config = api::build_config(&self.inner.settings, id.clone(), condition, seed, rounds)?;
        let record = SessionRecord {
            config,
            parent_session_id,
            created_ms: now_ms(),
        };
        self.inner.store.create(&record)?;
        let state = SessionState::new(record);
        self.inner
            .sessions
            .write()
            .await
            .insert(id.clone(), Arc::new(Mutex::new(state.clone())));
        tracing::info!("created session {id} ({condition})");
        Ok(state)
    }
}

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds the configured address, calls `on_bound` with the actual address,
/// and serves until Ctrl-C.
pub async fn run(
    config: &ServiceConfig,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ServiceError> {
    let state = AppState::from_config(config)?;
    let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
    on_bound(listener.local_addr()?);
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
