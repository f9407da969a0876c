//! Blind-test backend: shuffled real/synthetic sessions with opaque item
//! ids, append-only session logs and a small JSON-over-HTTP API.

mod api;
mod session;
mod store;

pub use api::{router, AppState, CreateRequest, CreateResponse, NextResponse, ResponseRequest, ORIENTATION_HEADER};
pub use session::{
    create_session, score, score_session, submit_response, Ack, BlindTestReport, BlindTestSession, ImageRef, Item, Label,
    OrientationItem, SessionConfig, SessionState,
};
pub use store::{replay, Entry, Event, SessionStore};

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gist_core::corpus::{read_dataset, CorpusError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BlindTestError {
    #[error("{pool} pool has {available} images, {needed} needed")]
    PoolTooSmall { pool: &'static str, needed: usize, available: usize },
    #[error("a session needs at least one test item")]
    EmptySession,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} already answered")]
    DuplicateResponse(String),
    #[error("session is complete")]
    SessionComplete,
    #[error("session incomplete: {remaining} items unanswered")]
    SessionIncomplete { remaining: usize },
    #[error("corrupt session log {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BlindTestError>;

/// `gist blindtest serve` configuration. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub real_archive: PathBuf,
    pub synthetic_archive: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Directory of session logs.
    #[serde(default = "default_sessions_dir")]
    pub sessions_dir: PathBuf,
    #[serde(default)]
    pub defaults: SessionConfig,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_sessions_dir() -> PathBuf {
    PathBuf::from("blindtest-sessions")
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ServiceConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.real_archive, &mut cfg.synthetic_archive, &mut cfg.sessions_dir] {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    /// Load both pools and replay existing session logs.
    pub fn into_state(&self) -> Result<AppState> {
        Ok(AppState {
            store: SessionStore::open(&self.sessions_dir)?,
            real_pool: read_dataset(&self.real_archive)?.0,
            synth_pool: read_dataset(&self.synthetic_archive)?.0,
            defaults: self.defaults,
        })
    }
}

/// Serve until the listener fails.
pub async fn serve(cfg: &ServiceConfig) -> Result<()> {
    let state = Arc::new(cfg.into_state()?);
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    log::info!("blind test service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
