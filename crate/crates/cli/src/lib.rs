//! Binaries around the engine: the HTTP chat service (`chacha-server`) and
//! the log statistics tool (`chacha-stats`).

pub mod config;
pub mod server;
pub mod stats;
