use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fixture::{DestinationSpec, Fixture, FunctionModel, ProbeKind, TrafficProfile};
use super::screen::render_screen;
use super::SimError;
use crate::model::{
    AllowAll, BlockPolicy, DeviceId, Direction, DnsObservation, Hostname, Protocol, Target,
    TraceEvent, TrafficRecord,
};
use crate::probes::Raster;

/// The router's resolver; every lookup is a UDP/53 flow to it.
pub const RESOLVER_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 1);
/// Answer given for sinkholed names.
pub const SINKHOLE_IP: Ipv4Addr = Ipv4Addr::new(127, 0, 0, 1);

const NTP_HOST: &str = "pool.ntp.org";
/// Gap between idle background traffic and the trigger, larger than any
/// probe window so the two never share one.
const TRIGGER_OFFSET: f64 = 25.0;
const BURST_WINDOW: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Also misread failures as successes at the device's error rate.
    pub false_positive_probes: bool,
    /// Keep the global trace (per-device segments are always kept).
    pub record_trace: bool,
}

impl SimConfig {
    pub fn seeded(seed: u64) -> Self {
        SimConfig {
            seed,
            false_positive_probes: false,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerOutcome {
    pub succeeded: bool,
    pub segment: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReading {
    pub observed_success: bool,
}

#[derive(Debug, Clone, Default)]
struct DeviceState {
    powered: bool,
    outcome: Option<bool>,
    /// Events since the last power cycle.
    segment: Vec<TraceEvent>,
}

pub struct Simulator {
    fixture: Arc<Fixture>,
    config: SimConfig,
    rng: ChaCha8Rng,
    clock: f64,
    trace: Vec<TraceEvent>,
    states: BTreeMap<DeviceId, DeviceState>,
    policy: Arc<dyn BlockPolicy>,
    registry: BTreeMap<String, Ipv4Addr>,
}

impl Simulator {
    pub fn new(fixture: Arc<Fixture>, config: SimConfig) -> Self {
        let mut hosts = fixture.hostnames();
        hosts.insert(NTP_HOST.to_string());
        let base = u32::from(Ipv4Addr::new(100, 64, 0, 1));
        let registry = hosts
            .into_iter()
            .enumerate()
            .map(|(i, h)| (h, Ipv4Addr::from(base + i as u32)))
            .collect();
        Simulator {
            fixture,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            clock: 0.0,
            trace: Vec::new(),
            states: BTreeMap::new(),
            policy: Arc::new(AllowAll),
            registry,
        }
    }

    pub fn fixture(&self) -> &Arc<Fixture> {
        &self.fixture
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Installs the rules the router enforces from now on.
    pub fn set_policy(&mut self, policy: Arc<dyn BlockPolicy>) {
        self.policy = policy;
    }

    pub fn policy(&self) -> Arc<dyn BlockPolicy> {
        Arc::clone(&self.policy)
    }

    pub fn clear_policy(&mut self) {
        self.policy = Arc::new(AllowAll);
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    /// Events of `device` since its last power cycle.
    pub fn segment(&self, device: &DeviceId) -> &[TraceEvent] {
        self.states.get(device).map_or(&[], |s| s.segment.as_slice())
    }

    /// Whether the last trigger since power-on really succeeded.
    pub fn ground_truth(&self, device: &DeviceId) -> Option<bool> {
        self.states.get(device).and_then(|s| s.outcome)
    }

    /// Address the simulated internet gives `host`.
    pub fn resolve(&mut self, host: &str) -> Ipv4Addr {
        if let Some(ip) = self.registry.get(host) {
            return *ip;
        }
        let base = u32::from(Ipv4Addr::new(100, 64, 0, 1));
        let ip = Ipv4Addr::from(base + self.registry.len() as u32);
        self.registry.insert(host.to_string(), ip);
        ip
    }

    pub fn power_cycle(&mut self, device: &DeviceId) -> Result<(), SimError> {
        let model = self.fixture.device(device)?;
        self.clock += model.boot_delay;
        self.states.insert(
            device.clone(),
            DeviceState {
                powered: true,
                ..Default::default()
            },
        );
        let t = self.clock;
        let ntp_ip = self.resolve(NTP_HOST);
        self.lookup(device, NTP_HOST, ntp_ip, t);
        self.record(device, t + 0.2, ntp_ip, 123, Protocol::Udp, 48, Direction::DeviceToDst);
        self.record(device, t + 0.3, ntp_ip, 123, Protocol::Udp, 48, Direction::DstToDevice);
        self.clock += 1.0;
        Ok(())
    }

    pub fn invoke_trigger(
        &mut self,
        device: &DeviceId,
        function: &str,
    ) -> Result<TriggerOutcome, SimError> {
        let fixture = Arc::clone(&self.fixture);
        let model = fixture.device(device)?;
        let f = model.function(function)?;
        let start = self.powered_segment_len(device)?;

        let t0 = self.clock;
        self.background(device, f, t0 + 1.0);

        let mut t = t0 + TRIGGER_OFFSET;
        let mut reachable: BTreeMap<&str, bool> = BTreeMap::new();
        let mut blocked_hosts = Vec::new();
        for spec in f.contacts() {
            let target = self.pick(spec)?;
            let ok = self.contact(device, &target, spec, &mut t);
            if !ok {
                if let Target::Host(h) = &target {
                    blocked_hosts.push((spec.base.clone(), h.as_str().to_string()));
                }
            }
            reachable.insert(spec.base.as_str(), ok);
        }
        let succeeded = f.required_deps.iter().all(|d| reachable[d.base.as_str()])
            && f
                .required_any_of
                .iter()
                .all(|g| g.iter().any(|d| reachable[d.base.as_str()]));

        if succeeded {
            if let Some(profile) = &f.activation_traffic {
                let captured =
                    model.probe != ProbeKind::Traffic || !self.rng.gen_bool(model.probe_error_rate);
                self.burst(device, profile, t + 2.0, captured);
            }
        } else {
            let required: Vec<&str> = f
                .required_deps
                .iter()
                .chain(f.required_any_of.iter().flatten())
                .map(|d| d.base.as_str())
                .collect();
            for retry in 1..=2 {
                for (base, host) in &blocked_hosts {
                    if required.contains(&base.as_str()) {
                        self.lookup(device, host, SINKHOLE_IP, t + 3.0 * f64::from(retry));
                    }
                }
            }
        }

        self.clock = t + 30.0;
        let state = self.states.get_mut(device).expect("powered");
        state.outcome = Some(succeeded);
        Ok(TriggerOutcome {
            succeeded,
            segment: state.segment[start..].to_vec(),
        })
    }

    /// A trigger-free period: only idle traffic. The function is not
    /// executed, so a later probe should read failure.
    pub fn idle(&mut self, device: &DeviceId, function: &str) -> Result<Vec<TraceEvent>, SimError> {
        let fixture = Arc::clone(&self.fixture);
        let f = fixture.device(device)?.function(function)?;
        let start = self.powered_segment_len(device)?;
        let t0 = self.clock;
        self.background(device, f, t0 + 1.0);
        self.clock = t0 + TRIGGER_OFFSET + 30.0;
        let state = self.states.get_mut(device).expect("powered");
        state.outcome = Some(false);
        Ok(state.segment[start..].to_vec())
    }

    /// Ground truth flipped at the device's probe error rate.
    pub fn probe_device(&mut self, device: &DeviceId, function: &str) -> Result<ProbeReading, SimError> {
        let model = self.fixture.device(device)?;
        model.function(function)?;
        let err = model.probe_error_rate;
        let truth = self
            .states
            .get(device)
            .and_then(|s| s.outcome)
            .ok_or_else(|| SimError::ProbeOrder(device.to_string()))?;
        let flip = self.rng.gen_bool(err);
        let observed_success = if truth {
            !flip
        } else {
            self.config.false_positive_probes && flip
        };
        Ok(ProbeReading { observed_success })
    }

    /// Companion-app screenshot after the last trigger.
    pub fn screenshot(&mut self, device: &DeviceId, function: &str) -> Result<Raster, SimError> {
        let reading = self.probe_device(device, function)?;
        Ok(render_screen(device, reading.observed_success, &mut self.rng))
    }

    fn powered_segment_len(&self, device: &DeviceId) -> Result<usize, SimError> {
        match self.states.get(device) {
            Some(s) if s.powered => Ok(s.segment.len()),
            _ => Err(SimError::PoweredOff(device.to_string())),
        }
    }

    fn pick(&mut self, spec: &DestinationSpec) -> Result<Target, SimError> {
        let targets = spec.concrete_targets()?;
        let Some(pool) = &spec.replica_pool else {
            return Ok(targets.into_iter().next().expect("one target"));
        };
        let mut u: f64 = self.rng.gen();
        for (target, replica) in targets.iter().zip(pool) {
            if u < replica.weight {
                return Ok(target.clone());
            }
            u -= replica.weight;
        }
        Ok(targets.last().expect("nonempty pool").clone())
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.gen_range(lo..=hi)
        } else {
            lo
        }
    }

    /// Resolves (if needed) and talks to one destination; false when the
    /// installed rules stop it.
    fn contact(&mut self, device: &DeviceId, target: &Target, spec: &DestinationSpec, t: &mut f64) -> bool {
        let blocked = self.policy.blocks(device, target, spec.port, spec.proto);
        let ip = match target {
            Target::Host(h) => {
                let ip = self.resolve(h.as_str());
                self.lookup(device, h.as_str(), if blocked { SINKHOLE_IP } else { ip }, *t);
                ip
            }
            Target::Ip(ip) => *ip,
        };
        if !blocked {
            let reply = if spec.proto == Protocol::Icmp { spec.bytes } else { spec.bytes * 3 };
            self.record(device, *t + 0.2, ip, spec.port, spec.proto, spec.bytes, Direction::DeviceToDst);
            self.record(device, *t + 0.4, ip, spec.port, spec.proto, reply, Direction::DstToDevice);
        }
        *t += 1.0;
        !blocked
    }

    fn background(&mut self, device: &DeviceId, f: &FunctionModel, t: f64) {
        if let Some(profile) = &f.background_traffic {
            self.burst(device, profile, t, true);
        }
    }

    fn burst(&mut self, device: &DeviceId, profile: &TrafficProfile, t: f64, captured: bool) {
        let rate = self.uniform(profile.min_kbps, profile.max_kbps);
        let Ok(target) = Target::parse(&profile.destination) else {
            return;
        };
        if rate <= 0.0 || self.policy.blocks(device, &target, 443, Protocol::Tcp) {
            return;
        }
        let ip = match &target {
            Target::Host(h) => {
                let ip = self.resolve(h.as_str());
                self.lookup(device, h.as_str(), ip, t - 0.5);
                ip
            }
            Target::Ip(ip) => *ip,
        };
        if captured {
            let bytes = (rate * BURST_WINDOW * 1000.0).round() as u64;
            self.record(device, t, ip, 443, Protocol::Tcp, bytes, Direction::DeviceToDst);
        }
    }

    fn lookup(&mut self, device: &DeviceId, host: &str, answer: Ipv4Addr, t: f64) {
        self.record(device, t, RESOLVER_IP, 53, Protocol::Udp, 40, Direction::DeviceToDst);
        let query_name = Hostname::new(host).expect("fixture hostnames are valid");
        self.emit(
            device,
            TraceEvent::Dns(DnsObservation {
                timestamp: t + 0.05,
                device_id: device.clone(),
                query_name,
                answer_ips: vec![answer],
            }),
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        device: &DeviceId,
        t: f64,
        dst_ip: Ipv4Addr,
        dst_port: u16,
        proto: Protocol,
        payload_bytes: u64,
        direction: Direction,
    ) {
        self.emit(
            device,
            TraceEvent::Traffic(TrafficRecord {
                timestamp: t,
                device_id: device.clone(),
                dst_ip,
                dst_port,
                proto,
                payload_bytes,
                direction,
            }),
        );
    }

    fn emit(&mut self, device: &DeviceId, event: TraceEvent) {
        if self.config.record_trace {
            self.trace.push(event.clone());
        }
        if let Some(s) = self.states.get_mut(device) {
            s.segment.push(event);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attribute_flows, DestinationPattern, DeviceBlocklist};
    use crate::netsim::{DeviceModel, FunctionModel};

    fn plug() -> DeviceModel {
        let mut functions = BTreeMap::new();
        functions.insert(
            "switch".to_string(),
            FunctionModel {
                required_deps: vec![DestinationSpec::new("n-devs.tplinkcloud.com")],
                required_any_of: vec![],
                optional_contacts: vec![
                    DestinationSpec::new("euw1-api.tplinkra.com"),
                    DestinationSpec::new("n-deventry.tplinkcloud.com"),
                    DestinationSpec::new("use1-api.tplinkra.com"),
                ],
                activation_traffic: None,
                background_traffic: None,
            },
        );
        DeviceModel {
            device_id: "tplink-plug".into(),
            name: "TP-Link plug".into(),
            category: "home-automation".into(),
            manufacturer: "TP-Link".into(),
            boot_delay: 30.0,
            probe_error_rate: 0.0,
            probe: ProbeKind::Screen,
            primary_function: "switch".into(),
            functions,
        }
    }

    fn replicas() -> DeviceModel {
        let mut d = plug();
        d.device_id = "replicas".into();
        let f = d.functions.get_mut("switch").unwrap();
        f.optional_contacts = vec![DestinationSpec::with_pool("*.yy.com", &["1.yy.com", "2.yy.com"])];
        d
    }

    fn sim(devices: Vec<DeviceModel>, seed: u64) -> Simulator {
        Simulator::new(Arc::new(Fixture::new(devices).unwrap()), SimConfig::seeded(seed))
    }

    fn contacted(segment: &[TraceEvent], dev: &DeviceId) -> Vec<String> {
        let mut out: Vec<String> = attribute_flows(segment, dev)
            .into_iter()
            .filter(|f| f.record.direction == Direction::DeviceToDst)
            .filter(|f| !crate::model::is_exempt_flow(f.record.dst_port, f.record.proto))
            .map(|f| f.destination.to_string())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    #[test]
    fn plug_contacts_all_four() {
        let dev = DeviceId::from("tplink-plug");
        let mut s = sim(vec![plug()], 1);
        s.power_cycle(&dev).unwrap();
        let out = s.invoke_trigger(&dev, "switch").unwrap();
        assert!(out.succeeded);
        assert_eq!(
            contacted(s.segment(&dev), &dev),
            [
                "euw1-api.tplinkra.com",
                "n-deventry.tplinkcloud.com",
                "n-devs.tplinkcloud.com",
                "use1-api.tplinkra.com"
            ]
        );
    }

    #[test]
    fn blocking_required_breaks_optional_does_not() {
        let dev = DeviceId::from("tplink-plug");
        let mut s = sim(vec![plug()], 1);
        for (host, expect) in [("n-devs.tplinkcloud.com", false), ("use1-api.tplinkra.com", true)] {
            let p: DestinationPattern = host.parse().unwrap();
            s.set_policy(Arc::new(DeviceBlocklist::with_patterns(&dev, [p])));
            s.power_cycle(&dev).unwrap();
            assert_eq!(s.invoke_trigger(&dev, "switch").unwrap().succeeded, expect);
        }
    }

    #[test]
    fn blocked_required_is_retried() {
        let dev = DeviceId::from("tplink-plug");
        let mut s = sim(vec![plug()], 1);
        let p: DestinationPattern = "n-devs.tplinkcloud.com".parse().unwrap();
        s.set_policy(Arc::new(DeviceBlocklist::with_patterns(&dev, [p])));
        s.power_cycle(&dev).unwrap();
        let out = s.invoke_trigger(&dev, "switch").unwrap();
        let lookups = out
            .segment
            .iter()
            .filter(|e| matches!(e, TraceEvent::Dns(d) if d.query_name.as_str() == "n-devs.tplinkcloud.com"))
            .count();
        assert_eq!(lookups, 3);
    }

    #[test]
    fn replicas_are_ephemeral() {
        let dev = DeviceId::from("replicas");
        let mut s = sim(vec![replicas()], 7);
        let mut counts = BTreeMap::new();
        for _ in 0..10 {
            s.power_cycle(&dev).unwrap();
            s.invoke_trigger(&dev, "switch").unwrap();
            for h in contacted(s.segment(&dev), &dev) {
                *counts.entry(h).or_insert(0) += 1;
            }
        }
        for r in ["1.yy.com", "2.yy.com"] {
            assert!(counts.get(r).copied().unwrap_or(0) < 8, "{r}: {counts:?}");
        }
    }

    #[test]
    fn protocol_errors() {
        let dev = DeviceId::from("tplink-plug");
        let mut s = sim(vec![plug()], 1);
        assert!(matches!(s.invoke_trigger(&dev, "switch"), Err(SimError::PoweredOff(_))));
        assert!(matches!(s.power_cycle(&"nope".into()), Err(SimError::UnknownDevice(_))));
        s.power_cycle(&dev).unwrap();
        assert!(matches!(s.probe_device(&dev, "switch"), Err(SimError::ProbeOrder(_))));
        assert!(matches!(
            s.invoke_trigger(&dev, "dance"),
            Err(SimError::UnknownFunction { .. })
        ));
    }

    #[test]
    fn double_power_cycle_equals_single() {
        let dev = DeviceId::from("tplink-plug");
        let mut s = sim(vec![plug()], 1);
        s.power_cycle(&dev).unwrap();
        s.power_cycle(&dev).unwrap();
        assert_eq!(s.ground_truth(&dev), None);
        assert!(s.invoke_trigger(&dev, "switch").unwrap().succeeded);
    }

    #[test]
    fn probe_noise_rate() {
        let dev = DeviceId::from("tplink-plug");
        let mut model = plug();
        model.probe_error_rate = 0.2;
        let mut s = sim(vec![model], 3);
        s.power_cycle(&dev).unwrap();
        s.invoke_trigger(&dev, "switch").unwrap();
        let ok = (0..10_000)
            .filter(|_| s.probe_device(&dev, "switch").unwrap().observed_success)
            .count();
        let frac = ok as f64 / 10_000.0;
        assert!((frac - 0.8).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn failures_never_read_as_success_without_false_positives() {
        let dev = DeviceId::from("tplink-plug");
        let mut model = plug();
        model.probe_error_rate = 0.5;
        let mut s = sim(vec![model], 3);
        s.set_policy(Arc::new(crate::model::BlockEverything { devices: vec![dev.clone()] }));
        s.power_cycle(&dev).unwrap();
        assert!(!s.invoke_trigger(&dev, "switch").unwrap().succeeded);
        assert!((0..1000).all(|_| !s.probe_device(&dev, "switch").unwrap().observed_success));
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let run = |seed| {
            let dev = DeviceId::from("replicas");
            let mut s = sim(vec![replicas()], seed);
            for _ in 0..5 {
                s.power_cycle(&dev).unwrap();
                s.invoke_trigger(&dev, "switch").unwrap();
            }
            let mut buf = Vec::new();
            crate::model::write_jsonl(&mut buf, s.trace()).unwrap();
            buf
        };
        assert_eq!(run(9), run(9));
    }
}
