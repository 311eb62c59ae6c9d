//! Analyses joining traces with classified destinations.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::{
    attribute_flows, is_exempt_flow, Classification, DestinationPattern, DeviceId, Direction, IoTrimEntry,
    Protocol, Target, TraceEvent,
};

/// The entry a device's flow falls under. Required patterns win when a
/// narrower required pattern sits inside a broader non-required one.
fn lookup<'a>(entries: &'a [IoTrimEntry], device: &DeviceId, dst: &Target) -> Option<&'a IoTrimEntry> {
    let mut matching = entries
        .iter()
        .filter(|e| &e.device_id == device && e.pattern.matches(dst));
    let first = matching.next()?;
    if first.classification == Classification::Required {
        return Some(first);
    }
    matching
        .find(|e| e.classification == Classification::Required)
        .or(Some(first))
}

fn devices_in(events: &[TraceEvent]) -> BTreeSet<DeviceId> {
    events.iter().map(|e| e.device_id().clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PortRow {
    /// `None` for flows to destinations missing from the list.
    pub classification: Option<Classification>,
    pub proto: Protocol,
    pub port: u16,
    pub flows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PortException {
    pub device_id: DeviceId,
    pub destination: DestinationPattern,
    pub target: String,
    pub proto: Protocol,
    pub port: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PortProtocolReport {
    pub histogram: Vec<PortRow>,
    /// Non-required flows not on TCP/443.
    pub exceptions: Vec<PortException>,
}

/// Device-to-destination flows per (classification, protocol, port).
/// DNS and NTP are left out.
pub fn port_protocol_summary(events: &[TraceEvent], entries: &[IoTrimEntry]) -> PortProtocolReport {
    let mut hist: BTreeMap<(Option<Classification>, Protocol, u16), u64> = BTreeMap::new();
    let mut exceptions = BTreeSet::new();
    for device in devices_in(events) {
        for flow in attribute_flows(events, &device) {
            let r = &flow.record;
            if r.direction != Direction::DeviceToDst || is_exempt_flow(r.dst_port, r.proto) {
                continue;
            }
            let entry = lookup(entries, &device, &flow.destination);
            let class = entry.map(|e| e.classification);
            *hist.entry((class, r.proto, r.dst_port)).or_default() += 1;
            if let Some(e) = entry.filter(|e| e.classification == Classification::NonRequired) {
                if (r.proto, r.dst_port) != (Protocol::Tcp, 443) {
                    exceptions.insert(PortException {
                        device_id: device.clone(),
                        destination: e.pattern.clone(),
                        target: flow.destination.to_string(),
                        proto: r.proto,
                        port: r.dst_port,
                    });
                }
            }
        }
    }
    PortProtocolReport {
        histogram: hist
            .into_iter()
            .map(|((classification, proto, port), flows)| PortRow {
                classification,
                proto,
                port,
                flows,
            })
            .collect(),
        exceptions: exceptions.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Volume {
    pub essential_bytes: u64,
    pub nonessential_bytes: u64,
    /// Destinations absent from the list.
    pub unclassified_bytes: u64,
}

impl Volume {
    fn add(&mut self, class: Option<Classification>, bytes: u64) {
        match class {
            Some(Classification::Required) => self.essential_bytes += bytes,
            Some(Classification::NonRequired) => self.nonessential_bytes += bytes,
            None => self.unclassified_bytes += bytes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VolumeSplit {
    pub per_device: BTreeMap<DeviceId, Volume>,
    pub total: Volume,
}

/// Device-to-destination payload bytes by classification.
pub fn traffic_volume_split(events: &[TraceEvent], entries: &[IoTrimEntry]) -> VolumeSplit {
    let mut split = VolumeSplit::default();
    for device in devices_in(events) {
        let mut v = Volume::default();
        for flow in attribute_flows(events, &device) {
            let r = &flow.record;
            if r.direction != Direction::DeviceToDst || is_exempt_flow(r.dst_port, r.proto) {
                continue;
            }
            let class = lookup(entries, &device, &flow.destination).map(|e| e.classification);
            v.add(class, r.payload_bytes);
            split.total.add(class, r.payload_bytes);
        }
        split.per_device.insert(device, v);
    }
    split
}
