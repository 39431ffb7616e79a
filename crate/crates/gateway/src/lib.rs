//! HTTP gateway for the adapter marketplace.
//!
//! Handlers authenticate with a per-account bearer token, read under a
//! shared lock and funnel every write through the single
//! [`Marketplace`] writer. Inference runs its forward pass under the read
//! lock and only takes the write lock to meter and record usage.

pub mod api;
pub mod clock;
mod error;
mod routes;

use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use viz_core::marketplace::{DataDir, MarketError, Marketplace};

pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{ApiError, ErrorBody};
pub use routes::router;

pub struct AppState {
    market: RwLock<Marketplace>,
    clock: Arc<dyn Clock>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(market: Marketplace, clock: Arc<dyn Clock>) -> SharedState {
        Arc::new(Self {
            market: RwLock::new(market),
            clock,
        })
    }

    /// Replays the data directory; a log that fails verification is refused.
    pub fn open(dir: &DataDir, clock: Arc<dyn Clock>) -> Result<SharedState, MarketError> {
        Ok(Self::new(Marketplace::open(dir)?, clock))
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn read(&self) -> Result<RwLockReadGuard<'_, Marketplace>, ApiError> {
        self.market
            .read()
            .map_err(|_| ApiError::internal("marketplace lock poisoned"))
    }

    pub fn write(&self) -> Result<RwLockWriteGuard<'_, Marketplace>, ApiError> {
        self.market
            .write()
            .map_err(|_| ApiError::internal("marketplace lock poisoned"))
    }
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: SharedState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
