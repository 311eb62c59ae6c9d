//! Deterministic simulated testbed: device models, power cycling,
//! triggering, noisy probe readings, and the traces the router would capture.

mod fixture;
mod screen;
mod sim;

use thiserror::Error;

pub use fixture::{
    DestinationSpec, DeviceModel, Fixture, FunctionModel, ProbeKind, Replica, TrafficProfile,
};
pub use screen::{reference_screen, render_screen, SCREEN_HEIGHT, SCREEN_WIDTH};
pub use sim::{ProbeReading, SimConfig, Simulator, TriggerOutcome, RESOLVER_IP, SINKHOLE_IP};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("device {device} has no function {function}")]
    UnknownFunction { device: String, function: String },
    #[error("device {0} is powered off; power-cycle it first")]
    PoweredOff(String),
    #[error("probe of {0} before any trigger since the last power cycle")]
    ProbeOrder(String),
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
