//! HTTP/WebSocket boundary and run control for the crisis event cloud.

pub mod engine;
pub mod http;

use thiserror::Error;

pub use engine::{Engine, EngineThread, Speed};
pub use http::{bind, parse_history_query, router, serve, HistoryQuery};

/// Environment variable holding the gateway port.
pub const PORT_ENV: &str = "CRISIS_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
