//! Shared domain types: destination patterns, traces, the IoTrim list, and
//! block policies.

mod iotrim;
mod pattern;
mod policy;
mod psl;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iotrim::{Classification, IoTrimEntry, IoTrimList, PartyType};
pub use pattern::{
    normalize_hostname, CidrBlock, DestinationPattern, Hostname, PatternKind, PatternRecord, Target,
};
pub use policy::{AllowAll, BlockEverything, BlockPolicy, DeviceBlocklist};
pub use psl::effective_sld;
pub use trace::{
    attribute_flows, is_exempt_flow, read_jsonl, write_jsonl, AttributedFlow, Direction,
    DnsObservation, Protocol, TraceEvent, TrafficRecord,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hostname {0:?}")]
    InvalidHostname(String),
    #[error("invalid target {0:?}: expected a hostname or IPv4 address")]
    InvalidTarget(String),
    #[error("invalid destination pattern {0:?}")]
    InvalidPattern(String),
    #[error("{0:?} has no registrable domain below its public suffix")]
    NoRegistrableDomain(String),
    #[error("duplicate entry for device {device} and pattern {pattern}")]
    DuplicateEntry { device: String, pattern: String },
    #[error("trace timestamps decrease at line {line}")]
    TraceOrder { line: usize },
    #[error("DNS observation without answers at line {line}")]
    EmptyAnswer { line: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifier of one IoT device (e.g. `echo-dot`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for DeviceId {
    fn from(value: &str) -> Self {
        DeviceId(value.to_string())
    }
}

impl From<String> for DeviceId {
    fn from(value: String) -> Self {
        DeviceId(value)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for DeviceId {
    fn borrow(&self) -> &str {
        &self.0
    }
}
