//! HTTP service for the boundary game: configuration, SQLite persistence and
//! the `/api/v1/` JSON API.

pub mod api;
pub mod config;
pub mod sqlite;

use std::sync::Arc;
use std::time::Duration;

use seam_core::round::{RoundEngine, SystemClock};

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use sqlite::SqliteStore;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] seam_core::StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bind and serve until ctrl-c. Stale rounds are swept once a minute.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServeError> {
    let store = Arc::new(SqliteStore::open(&cfg.store)?);
    let engine = Arc::new(RoundEngine::new(store, cfg.engine()));
    let state = AppState {
        engine: Arc::clone(&engine),
        clock: Arc::new(SystemClock),
    };
    let app = router(state, cfg.static_dir.as_deref());

    let sweeper = Arc::clone(&engine);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let engine = Arc::clone(&sweeper);
            let expired = tokio::task::spawn_blocking(move || engine.expire_stale())
                .await
                .unwrap_or(0);
            if expired > 0 {
                tracing::info!(expired, "abandoned stale rounds");
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
