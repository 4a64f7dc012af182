//! Run store, model gateway, discussion driver and HTTP API on top of
//! [`rtrc_core`].

pub mod config;
pub mod embed;
pub mod fixtures;
pub mod gateway;
pub mod orchestrator;
pub mod pipeline;
pub mod server;
pub mod store;
