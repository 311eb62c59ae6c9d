//! Enforcement: per-device rule sets, a DNS sinkhole, and firewall exports.

mod export;
mod rules;
mod server;
pub mod wire;

use thiserror::Error;

pub use export::{export_firewall_rules, firewall_rules, Action, ExportFormat, FirewallRule};
pub use rules::{
    blocks_hostname, compile_rules, normalize_address, should_block, BlockingStrategy, DefaultPolicy,
    DeviceAssociation, DeviceRules, RuleSet,
};
pub use server::{serve_dns, QueryLog, ServerConfig, ServerHandle, SINKHOLE_TTL};

#[derive(Debug, Error)]
pub enum BlockerError {
    #[error("{0}")]
    Config(String),
    #[error("unsupported export format {0:?}")]
    UnsupportedFormat(String),
    #[error("malformed DNS message: {0}")]
    Wire(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
