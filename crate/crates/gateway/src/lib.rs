//! Streaming front end for the myoreview training loop: a deterministic
//! engine, the `reviewer/v1` wire protocol, timed command scripts, replay,
//! synthetic session recording and a WebSocket server.

pub mod commands;
pub mod engine;
pub mod error;
pub mod record;
pub mod replay;
pub mod script;
pub mod server;
pub mod wire;

pub use engine::{Engine, EngineConfig};
pub use error::{GatewayError, Result};
