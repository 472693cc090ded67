//! HTTP front end for co-annotation projects.
//!
//! Admin endpoints live under `/admin`, annotator endpoints under `/me`.
//! Every request carries a static bearer token that maps to a role (and
//! optionally a single project). Annotator responses are built only from
//! annotator-facing types, so hidden scaffold fields cannot appear in them.

mod api;
mod auth;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use coannotate_core::protocol::{Engine, ProtocolError};
use coannotate_core::scaffold::{ProviderError, ProviderSettings};
use coannotate_core::store::{Store, StoreError};
use thiserror::Error;
use tracing::info;

pub use api::{router, AppState, CreateProject, GenerateBody};
pub use auth::{Role, Session, TokenError, TokenTable};
pub use error::{ApiError, ErrorBody};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub token_file: PathBuf,
    pub storage_dir: PathBuf,
    pub provider: Option<ProviderSettings>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Tokens(#[from] TokenError),
    #[error("opening store: {0}")]
    Store(#[from] StoreError),
    #[error("loading projects: {0}")]
    Engine(#[from] ProtocolError),
    #[error("provider settings: {0}")]
    Provider(#[from] ProviderError),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Loads tokens and the store, then builds the application state. Every
/// configuration problem is reported here, before anything listens.
pub fn prepare(config: &ServerConfig) -> Result<AppState, ServeError> {
    let tokens = TokenTable::load(&config.token_file)?;
    let store = Arc::new(Store::open(&config.storage_dir)?);
    let engine = Arc::new(Engine::with_store(store)?);
    Ok(AppState::new(engine, tokens, config.provider.clone()))
}

pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let state = prepare(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.bind,
            source,
        })?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
