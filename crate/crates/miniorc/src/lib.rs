//! Gateway for the miniorc orchestration core.

pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod journal;
pub mod service;

use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;

use crate::config::{ClockMode, Config};
use crate::service::{ServeError, Service};

/// Serves `service` on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = (service.clock_mode() == ClockMode::Realtime).then(|| {
        let svc = service.clone();
        let period = Duration::from_millis(svc.config().clock.tick_ms.max(1));
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.tick().await;
            loop {
                interval.tick().await;
                if let Err(e) = svc.tick() {
                    tracing::error!(error = %e, "clock tick failed");
                }
            }
        })
    });
    let app = api::router(service);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    if let Some(t) = ticker {
        t.abort();
    }
    result
}

/// Opens the journal, binds the configured address and serves until ctrl-c.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    let addr = config.server.listen.clone();
    let service = Arc::new(Service::open(config)?);
    let listener = TcpListener::bind(&addr).await.map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    tracing::info!(%addr, seq = service.last_seq(), "ready");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve_on(listener, service, shutdown).await.map_err(|source| ServeError::Bind { addr, source })
}
