//! HTTP ingress gateway in front of a research enclave.
//!
//! Clinical payloads are de-identified on the way in; whatever cannot be
//! cleared automatically waits in a hospital-side quarantine for review.

pub mod auth;
pub mod config;
pub mod error;
pub mod http;
pub mod state;
pub mod store;
pub mod tickets;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod totp;

use std::sync::Arc;

use enclave_gate_core::SystemClock;

pub use config::GatewayConfig;
pub use http::router;
pub use state::{Gateway, StartupError};

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: GatewayConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let gateway = Arc::new(Gateway::from_config(&config, Arc::new(SystemClock))?);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    Ok(())
}
