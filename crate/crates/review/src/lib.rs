//! Review service: serves analysis results over HTTP/JSON and takes human
//! labels for low-confidence detections.
//!
//! Labels are appended to a JSON-lines log and replayed on start, so a
//! review session survives restarts.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

pub use api::{router, SharedState};
pub use error::ReviewError;
pub use state::{DriveInput, ReviewState};

pub fn shared(state: ReviewState) -> SharedState {
    Arc::new(RwLock::new(state))
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: SharedState, addr: SocketAddr) -> Result<(), ReviewError> {
    serve_on(bind(addr).await?, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: SharedState) -> Result<(), ReviewError> {
    let addr = listener.local_addr().map_or_else(|_| "listener".to_string(), |a| a.to_string());
    axum::serve(listener, router(state)).await.map_err(|source| ReviewError::Bind { addr, source })
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ReviewError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| ReviewError::Bind { addr: addr.to_string(), source })
}
