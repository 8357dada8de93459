//! Cross-lingual sentence search over a persisted index.
//!
//! `GET /health`, `GET /corpora`, `GET /stats`, `POST /query`.

pub mod api;
pub mod index;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::{router, AppState, IndexSlot, QueryRequest, QueryResponse};
pub use index::{build_index, read_manifest, Filters, IndexError, IndexSpec, Manifest, Payload, SearchIndex, SideInput};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Server settings. Precedence: explicit flags, then `HISTKIT_ADDR`, then
/// the TOML file, then defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub index: Option<PathBuf>,
    pub addr: Option<String>,
    /// `stub` or `remote`.
    pub provider: Option<String>,
    pub model: Option<String>,
    pub cors_origin: Option<String>,
}

impl ServerConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Overrides `addr` from `HISTKIT_ADDR` when set.
    pub fn apply_env(mut self) -> Self {
        if let Ok(addr) = std::env::var("HISTKIT_ADDR") {
            if !addr.trim().is_empty() {
                self.addr = Some(addr);
            }
        }
        self
    }

    pub fn addr(&self) -> &str {
        self.addr.as_deref().unwrap_or(DEFAULT_ADDR)
    }
}

/// Binds `addr`, starts loading `index` in the background (queries get 503
/// until it is ready) and serves until Ctrl-C.
pub async fn serve(
    addr: &str,
    state: AppState,
    index: Option<PathBuf>,
    cors_origin: Option<&str>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{local}");
    if let Some(dir) = index {
        state.spawn_load(dir);
    }
    axum::serve(listener, router(state, cors_origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
