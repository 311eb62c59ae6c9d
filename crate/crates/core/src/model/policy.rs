use std::collections::BTreeMap;

use super::pattern::{DestinationPattern, Target};
use super::trace::{is_exempt_flow, Protocol};
use super::DeviceId;

/// Decides whether a device's flow to a destination is blocked. Hostname
/// targets are decided at the DNS layer, IP targets at the firewall.
pub trait BlockPolicy: Send + Sync {
    fn blocks(&self, device: &DeviceId, dst: &Target, port: u16, proto: Protocol) -> bool;
}

/// No rules installed.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllowAll;

impl BlockPolicy for AllowAll {
    fn blocks(&self, _: &DeviceId, _: &Target, _: u16, _: Protocol) -> bool {
        false
    }
}

/// Per-device deny patterns, as installed during block-and-test. Targets
/// matching one of the device's exempt patterns are never blocked.
#[derive(Debug, Clone, Default)]
pub struct DeviceBlocklist {
    patterns: BTreeMap<DeviceId, Vec<DestinationPattern>>,
    exempt: BTreeMap<DeviceId, Vec<DestinationPattern>>,
}

impl DeviceBlocklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_patterns<I>(device: &DeviceId, patterns: I) -> Self
    where
        I: IntoIterator<Item = DestinationPattern>,
    {
        let mut list = Self::new();
        for p in patterns {
            list.block(device, p);
        }
        list
    }

    pub fn block(&mut self, device: &DeviceId, pattern: DestinationPattern) {
        let entry = self.patterns.entry(device.clone()).or_default();
        if !entry.contains(&pattern) {
            entry.push(pattern);
        }
    }

    pub fn exempt(&mut self, device: &DeviceId, pattern: DestinationPattern) {
        let entry = self.exempt.entry(device.clone()).or_default();
        if !entry.contains(&pattern) {
            entry.push(pattern);
        }
    }

    pub fn patterns(&self, device: &DeviceId) -> &[DestinationPattern] {
        self.patterns.get(device).map_or(&[], Vec::as_slice)
    }

    pub fn exemptions(&self, device: &DeviceId) -> &[DestinationPattern] {
        self.exempt.get(device).map_or(&[], Vec::as_slice)
    }
}

impl BlockPolicy for DeviceBlocklist {
    fn blocks(&self, device: &DeviceId, dst: &Target, port: u16, proto: Protocol) -> bool {
        if is_exempt_flow(port, proto) {
            return false;
        }
        self.patterns(device).iter().any(|p| p.matches(dst))
            && !self.exemptions(device).iter().any(|p| p.matches(dst))
    }
}

/// Blocks every non-exempt flow of the listed devices.
#[derive(Debug, Clone, Default)]
pub struct BlockEverything {
    pub devices: Vec<DeviceId>,
}

impl BlockPolicy for BlockEverything {
    fn blocks(&self, device: &DeviceId, _: &Target, port: u16, proto: Protocol) -> bool {
        !is_exempt_flow(port, proto) && self.devices.contains(device)
    }
}
