//! HTTP service boundary for holonsim: loads runs, paces their clocks,
//! takes trips and operator commands, and streams the run log.

pub mod api;
pub mod config;
pub mod runs;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, AppState, Shared};
pub use config::{Backend, ConfigError, GatewayConfig, ReasonerConfig};
pub use runs::{Run, RunDescriptor, RunError, RunManager, RunSpec, RunStatus};

pub fn app_state(config: GatewayConfig) -> Shared {
    let runs = RunManager::new(Some(config.server.runs_dir.clone()));
    Arc::new(AppState { config, runs })
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: GatewayConfig) -> std::io::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.server.bind, config.server.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("holonsim gateway listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app_state(config))).await
}
