//! Traffic and DNS observations, the JSONL trace format, and IP-to-hostname
//! attribution.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::pattern::{Hostname, Target};
use super::{DeviceId, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Icmp => "ICMP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    DeviceToDst,
    DstToDevice,
}

/// DNS (TCP/UDP 53) and NTP (UDP 123) are always allowed and never treated
/// as destinations.
pub fn is_exempt_flow(port: u16, proto: Protocol) -> bool {
    match proto {
        Protocol::Tcp => port == 53,
        Protocol::Udp => port == 53 || port == 123,
        Protocol::Icmp => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub timestamp: f64,
    pub device_id: DeviceId,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Protocol,
    /// Payload only, headers excluded.
    pub payload_bytes: u64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsObservation {
    pub timestamp: f64,
    pub device_id: DeviceId,
    pub query_name: Hostname,
    pub answer_ips: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Traffic(TrafficRecord),
    Dns(DnsObservation),
}

impl TraceEvent {
    pub fn timestamp(&self) -> f64 {
        match self {
            TraceEvent::Traffic(r) => r.timestamp,
            TraceEvent::Dns(d) => d.timestamp,
        }
    }

    pub fn device_id(&self) -> &DeviceId {
        match self {
            TraceEvent::Traffic(r) => &r.device_id,
            TraceEvent::Dns(d) => &d.device_id,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<(), ModelError> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL trace; timestamps must be non-decreasing.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceEvent>, ModelError> {
    let mut events = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: TraceEvent = serde_json::from_str(&line)?;
        if event.timestamp() < last {
            return Err(ModelError::TraceOrder { line: idx + 1 });
        }
        if let TraceEvent::Dns(d) = &event {
            if d.answer_ips.is_empty() {
                return Err(ModelError::EmptyAnswer { line: idx + 1 });
            }
        }
        last = event.timestamp();
        events.push(event);
    }
    Ok(events)
}

/// A traffic record with its destination resolved to a hostname when the
/// device's DNS traffic explains the IP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedFlow {
    pub record: TrafficRecord,
    pub destination: Target,
}

/// Attributes every traffic record of `device` to the most recent DNS answer
/// (at or before the record) that contained its destination IP; records with
/// no such answer keep the raw IP.
pub fn attribute_flows(events: &[TraceEvent], device: &DeviceId) -> Vec<AttributedFlow> {
    let mut resolved: HashMap<Ipv4Addr, (f64, Hostname)> = HashMap::new();
    let mut flows = Vec::new();
    for event in events.iter().filter(|e| e.device_id() == device) {
        match event {
            TraceEvent::Dns(obs) => {
                for ip in &obs.answer_ips {
                    let newer = resolved
                        .get(ip)
                        .is_none_or(|(ts, _)| obs.timestamp >= *ts);
                    if newer {
                        resolved.insert(*ip, (obs.timestamp, obs.query_name.clone()));
                    }
                }
            }
            TraceEvent::Traffic(rec) => {
                let destination = match resolved.get(&rec.dst_ip) {
                    Some((_, host)) => Target::Host(host.clone()),
                    None => Target::Ip(rec.dst_ip),
                };
                flows.push(AttributedFlow {
                    record: rec.clone(),
                    destination,
                });
            }
        }
    }
    flows
}
